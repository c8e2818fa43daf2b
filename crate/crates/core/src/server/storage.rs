//! Persistence of server sessions.
//!
//! [`CsvStorage`] keeps one directory per application:
//!
//! | file | content |
//! |---|---|
//! | `description.txt` | the description received from the first client |
//! | `doe.csv` | every issued DoE row, appended per batch |
//! | `observations.csv` | the append-only observation log |
//! | `clusters.csv` | feature centroids of the last learning run |
//! | `knowledge.csv` | the operating points, once broadcast |
//! | `report.csv` | validation report of the last learning run |

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use log::warn;
use parking_lot::Mutex;
use std::sync::Arc;
use thiserror::Error;

use crate::domain::{
    clusters_header, decode_csv_row, decode_description, doe_header, encode_csv_row,
    encode_description, observation_header, ApplicationDescription, CsvRecord, DoeRow,
    FeatureVector, KnowledgeBase, Observation, OperatingPoint, RowLayout,
};
use crate::knowledge::knowledge_csv;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("storage i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("stored description is unreadable: {0}")]
    Description(String),
}

/// Everything persisted for one application.
#[derive(Debug, Clone, Default)]
pub struct Persisted {
    pub desc: Option<ApplicationDescription>,
    pub doe: Vec<DoeRow>,
    pub observations: Vec<Observation>,
    pub centroids: Option<Vec<FeatureVector>>,
    pub knowledge: Option<Vec<OperatingPoint>>,
    pub report: Option<String>,
    /// Rows that failed to parse and were skipped.
    pub skipped: usize,
}

/// Writes return only once the data is durable.
pub trait Storage: Send {
    /// Applications with stored state.
    fn apps(&self) -> Result<Vec<String>, StorageError>;
    fn load(&self, app: &str) -> Result<Persisted, StorageError>;
    fn write_description(&mut self, desc: &ApplicationDescription) -> Result<(), StorageError>;
    fn append_doe(&mut self, desc: &ApplicationDescription, rows: &[DoeRow]) -> Result<(), StorageError>;
    fn append_observation(&mut self, desc: &ApplicationDescription, obs: &Observation) -> Result<(), StorageError>;
    fn write_clusters(&mut self, desc: &ApplicationDescription, centroids: &[FeatureVector]) -> Result<(), StorageError>;
    fn write_knowledge(&mut self, desc: &ApplicationDescription, kb: &KnowledgeBase) -> Result<(), StorageError>;
    fn write_report(&mut self, desc: &ApplicationDescription, report: &str) -> Result<(), StorageError>;
}

/// Creates the storage of one application. Sessions of different
/// applications get their own handle so they never contend.
pub trait StorageFactory: Send + Sync {
    fn open(&self) -> Box<dyn Storage>;
    fn apps(&self) -> Result<Vec<String>, StorageError>;
}

fn rows<R: CsvRecord>(text: &str, layout: &RowLayout, skipped: &mut usize, what: &str) -> Vec<R> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .filter_map(|l| match decode_csv_row(l, layout) {
            Ok(r) => Some(r),
            Err(e) => {
                warn!("skipping corrupted {what} row: {e}");
                *skipped += 1;
                None
            }
        })
        .collect()
}

fn with_header(header: String, body: impl IntoIterator<Item = String>) -> String {
    let mut out = header;
    out.push('\n');
    for line in body {
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// Rebuilds [`Persisted`] from the text of each file.
pub fn parse_files(files: &BTreeMap<&'static str, String>) -> Result<Persisted, StorageError> {
    let mut p = Persisted::default();
    let Some(text) = files.get(DESCRIPTION) else {
        return Ok(p);
    };
    let desc = decode_description(text).map_err(|e| StorageError::Description(e.to_string()))?;
    let layout = desc.layout();
    if let Some(t) = files.get(DOE) {
        p.doe = rows(t, &layout, &mut p.skipped, "doe");
    }
    if let Some(t) = files.get(OBSERVATIONS) {
        p.observations = rows(t, &layout, &mut p.skipped, "observation");
    }
    if let Some(t) = files.get(CLUSTERS) {
        p.centroids = Some(if desc.features.is_empty() {
            vec![FeatureVector::default()]
        } else {
            rows(t, &layout, &mut p.skipped, "cluster")
        });
    }
    if let Some(t) = files.get(KNOWLEDGE) {
        p.knowledge = Some(rows(t, &layout, &mut p.skipped, "knowledge"));
    }
    p.report = files.get(REPORT).cloned();
    p.desc = Some(desc);
    Ok(p)
}

const DESCRIPTION: &str = "description.txt";
const DOE: &str = "doe.csv";
const OBSERVATIONS: &str = "observations.csv";
const CLUSTERS: &str = "clusters.csv";
const KNOWLEDGE: &str = "knowledge.csv";
const REPORT: &str = "report.csv";
const FILES: [&str; 6] = [DESCRIPTION, DOE, OBSERVATIONS, CLUSTERS, KNOWLEDGE, REPORT];

fn description_text(desc: &ApplicationDescription) -> String {
    encode_description(desc).unwrap_or_else(|e| {
        warn!("description of {} is not fully serializable: {e}", desc.app_name);
        let mut d = desc.clone();
        d.doe_params.restriction = None;
        encode_description(&d).unwrap_or_default()
    })
}

/// One directory per application under a root.
#[derive(Debug, Clone)]
pub struct CsvStorage {
    root: PathBuf,
}

impl CsvStorage {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dir(&self, app: &str) -> PathBuf {
        self.root.join(app)
    }

    fn path(&self, desc: &ApplicationDescription, file: &str) -> Result<PathBuf, StorageError> {
        let dir = self.dir(&desc.app_name);
        fs::create_dir_all(&dir)?;
        Ok(dir.join(file))
    }

    fn replace(&self, desc: &ApplicationDescription, file: &str, text: &str) -> Result<(), StorageError> {
        let path = self.path(desc, file)?;
        let tmp = path.with_extension("tmp");
        let mut f = File::create(&tmp)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    fn append(&self, desc: &ApplicationDescription, file: &str, header: String, lines: &[String]) -> Result<(), StorageError> {
        let path = self.path(desc, file)?;
        let fresh = !path.exists() || fs::metadata(&path)?.len() == 0;
        let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
        let mut text = String::new();
        if fresh {
            text.push_str(&header);
            text.push('\n');
        }
        for l in lines {
            text.push_str(l);
            text.push('\n');
        }
        f.write_all(text.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }
}

fn read_if_exists(path: &Path) -> Result<Option<String>, StorageError> {
    match File::open(path) {
        Ok(f) => {
            let mut text = String::new();
            for line in BufReader::new(f).lines() {
                text.push_str(&line?);
                text.push('\n');
            }
            Ok(Some(text))
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

impl Storage for CsvStorage {
    fn apps(&self) -> Result<Vec<String>, StorageError> {
        let mut apps = Vec::new();
        match fs::read_dir(&self.root) {
            Ok(entries) => {
                for e in entries {
                    let e = e?;
                    if e.path().join(DESCRIPTION).exists() {
                        apps.push(e.file_name().to_string_lossy().into_owned());
                    }
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        apps.sort();
        Ok(apps)
    }

    fn load(&self, app: &str) -> Result<Persisted, StorageError> {
        let dir = self.dir(app);
        let mut files = BTreeMap::new();
        for name in FILES {
            if let Some(text) = read_if_exists(&dir.join(name))? {
                files.insert(name, text);
            }
        }
        parse_files(&files)
    }

    fn write_description(&mut self, desc: &ApplicationDescription) -> Result<(), StorageError> {
        self.replace(desc, DESCRIPTION, &description_text(desc))
    }

    fn append_doe(&mut self, desc: &ApplicationDescription, rows: &[DoeRow]) -> Result<(), StorageError> {
        let lines: Vec<String> = rows.iter().map(encode_csv_row).collect();
        self.append(desc, DOE, doe_header(desc), &lines)
    }

    fn append_observation(&mut self, desc: &ApplicationDescription, obs: &Observation) -> Result<(), StorageError> {
        self.append(desc, OBSERVATIONS, observation_header(desc), &[encode_csv_row(obs)])
    }

    fn write_clusters(&mut self, desc: &ApplicationDescription, centroids: &[FeatureVector]) -> Result<(), StorageError> {
        let text = with_header(clusters_header(desc), centroids.iter().map(encode_csv_row));
        self.replace(desc, CLUSTERS, &text)
    }

    fn write_knowledge(&mut self, desc: &ApplicationDescription, kb: &KnowledgeBase) -> Result<(), StorageError> {
        self.replace(desc, KNOWLEDGE, &knowledge_csv(desc, kb))
    }

    fn write_report(&mut self, desc: &ApplicationDescription, report: &str) -> Result<(), StorageError> {
        self.replace(desc, REPORT, report)
    }
}

impl StorageFactory for CsvStorage {
    fn open(&self) -> Box<dyn Storage> {
        Box::new(self.clone())
    }

    fn apps(&self) -> Result<Vec<String>, StorageError> {
        Storage::apps(self)
    }
}

/// In-memory storage holding the same file texts as [`CsvStorage`].
/// Clones share their contents.
#[derive(Debug, Clone, Default)]
pub struct MemoryStorage {
    files: Arc<Mutex<BTreeMap<String, BTreeMap<&'static str, String>>>>,
}

impl MemoryStorage {
    pub fn new() -> Self {
        Self::default()
    }

    /// Text of one stored file.
    pub fn file(&self, app: &str, name: &str) -> Option<String> {
        self.files.lock().get(app)?.get(name).cloned()
    }

    /// Replaces a file's text, e.g. to simulate corruption.
    pub fn set_file(&self, app: &str, name: &'static str, text: String) {
        self.files.lock().entry(app.into()).or_default().insert(name, text);
    }

    fn put(&self, desc: &ApplicationDescription, name: &'static str, text: String) {
        self.set_file(&desc.app_name, name, text);
    }

    fn push(&self, desc: &ApplicationDescription, name: &'static str, header: String, lines: &[String]) {
        let mut files = self.files.lock();
        let file = files
            .entry(desc.app_name.clone())
            .or_default()
            .entry(name)
            .or_insert_with(|| header + "\n");
        for l in lines {
            file.push_str(l);
            file.push('\n');
        }
    }
}

impl Storage for MemoryStorage {
    fn apps(&self) -> Result<Vec<String>, StorageError> {
        Ok(self
            .files
            .lock()
            .iter()
            .filter(|(_, f)| f.contains_key(DESCRIPTION))
            .map(|(a, _)| a.clone())
            .collect())
    }

    fn load(&self, app: &str) -> Result<Persisted, StorageError> {
        let files = self.files.lock().get(app).cloned().unwrap_or_default();
        parse_files(&files)
    }

    fn write_description(&mut self, desc: &ApplicationDescription) -> Result<(), StorageError> {
        self.put(desc, DESCRIPTION, description_text(desc));
        Ok(())
    }

    fn append_doe(&mut self, desc: &ApplicationDescription, rows: &[DoeRow]) -> Result<(), StorageError> {
        let lines: Vec<String> = rows.iter().map(encode_csv_row).collect();
        self.push(desc, DOE, doe_header(desc), &lines);
        Ok(())
    }

    fn append_observation(&mut self, desc: &ApplicationDescription, obs: &Observation) -> Result<(), StorageError> {
        self.push(desc, OBSERVATIONS, observation_header(desc), &[encode_csv_row(obs)]);
        Ok(())
    }

    fn write_clusters(&mut self, desc: &ApplicationDescription, centroids: &[FeatureVector]) -> Result<(), StorageError> {
        self.put(desc, CLUSTERS, with_header(clusters_header(desc), centroids.iter().map(encode_csv_row)));
        Ok(())
    }

    fn write_knowledge(&mut self, desc: &ApplicationDescription, kb: &KnowledgeBase) -> Result<(), StorageError> {
        self.put(desc, KNOWLEDGE, knowledge_csv(desc, kb));
        Ok(())
    }

    fn write_report(&mut self, desc: &ApplicationDescription, report: &str) -> Result<(), StorageError> {
        self.put(desc, REPORT, report.to_string());
        Ok(())
    }
}

impl StorageFactory for MemoryStorage {
    fn open(&self) -> Box<dyn Storage> {
        Box::new(self.clone())
    }

    fn apps(&self) -> Result<Vec<String>, StorageError> {
        Storage::apps(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{KnobConfig, KnobDomain};

    fn desc() -> ApplicationDescription {
        ApplicationDescription::new(
            "toy",
            vec![KnobDomain::new("k", vec![1.0, 2.0]).unwrap()],
            vec!["t".into()],
            vec!["f".into()],
        )
    }

    fn obs(ts: i64) -> Observation {
        Observation {
            client_id: "c1".into(),
            config: KnobConfig::new(vec![2.0]),
            features: FeatureVector::new(vec![0.25]),
            metrics: vec![0.1].into(),
            timestamp: ts,
        }
    }

    fn exercise(mut s: impl Storage) {
        let d = desc();
        assert!(s.load("toy").unwrap().desc.is_none());
        s.write_description(&d).unwrap();
        s.append_doe(&d, &[DoeRow { config: KnobConfig::new(vec![1.0]), remaining_repetitions: 2 }]).unwrap();
        s.append_observation(&d, &obs(1)).unwrap();
        s.append_observation(&d, &obs(2)).unwrap();
        s.write_clusters(&d, &[FeatureVector::new(vec![0.25])]).unwrap();
        let p = s.load("toy").unwrap();
        assert_eq!(p.desc.as_ref().unwrap(), &d);
        assert_eq!(p.doe.len(), 1);
        assert_eq!(p.observations, vec![obs(1), obs(2)]);
        assert_eq!(p.centroids.unwrap().len(), 1);
        assert!(p.knowledge.is_none());
        assert_eq!(s.apps().unwrap(), vec!["toy".to_string()]);
    }

    #[test]
    fn csv_storage_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        exercise(CsvStorage::new(dir.path()));
        let log = fs::read_to_string(dir.path().join("toy/observations.csv")).unwrap();
        assert_eq!(log, "client_id,k,f,t,timestamp\nc1,2,0.25,0.1,1\nc1,2,0.25,0.1,2\n");
    }

    #[test]
    fn memory_storage_round_trip() {
        exercise(MemoryStorage::new());
    }

    #[test]
    fn corrupted_rows_are_counted() {
        let m = MemoryStorage::new();
        let mut s = m.clone();
        s.write_description(&desc()).unwrap();
        s.append_observation(&desc(), &obs(1)).unwrap();
        let mut log = m.file("toy", OBSERVATIONS).unwrap();
        log.push_str("c1,2,oops\n");
        m.set_file("toy", OBSERVATIONS, log);
        let p = m.load("toy").unwrap();
        assert_eq!((p.observations.len(), p.skipped), (1, 1));
    }
}
