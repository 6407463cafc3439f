//! The payload collection database.
//!
//! One JSON record per line, payload bytes hex-encoded, record ids assigned
//! by the store and strictly increasing in file order — also across reopen.
//! `ground_truth_family` is an evaluation oracle: real deployments would
//! not know which family produced a payload. A database can also run
//! purely in memory (no path), which unit tests use.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{InspectorId, NetworkId, Tick, VmId};
use crate::introspect::AnomalyReport;
use crate::worm::Payload;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionRecord {
    pub record_id: u64,
    pub tick: Tick,
    pub network_id: NetworkId,
    pub inspector_id: InspectorId,
    pub honeypot_id: VmId,
    pub template_name: String,
    /// Captured payload, hex-encoded.
    pub payload_bytes: String,
    /// Evaluation-only oracle: the family that actually built the payload.
    pub ground_truth_family: String,
    pub anomaly: AnomalyReport,
}

/// Everything the inspector knows about one capture; the store assigns the id.
#[derive(Debug, Clone)]
pub struct RecordDraft {
    pub tick: Tick,
    pub network_id: NetworkId,
    pub inspector_id: InspectorId,
    pub honeypot_id: VmId,
    pub template_name: String,
    pub payload: Payload,
    pub anomaly: AnomalyReport,
}

#[derive(Debug)]
pub struct CollectionDb {
    path: Option<PathBuf>,
    records: Vec<CollectionRecord>,
    next_id: u64,
}

impl CollectionDb {
    /// Opens (or creates) a line-per-record database file. Existing records
    /// are loaded and id assignment continues past the highest one found.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut records = Vec::new();
        if !path.exists() {
            File::create(&path)?;
        } else {
            let reader = BufReader::new(File::open(&path)?);
            for (lineno, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: CollectionRecord = serde_json::from_str(&line).map_err(|e| {
                    Error::scenario(format!(
                        "corrupt collection record at {}:{}: {e}",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                records.push(record);
            }
        }
        let next_id = records.iter().map(|r| r.record_id).max().unwrap_or(0) + 1;
        Ok(CollectionDb {
            path: Some(path),
            records,
            next_id,
        })
    }

    /// A database that never touches the filesystem.
    pub fn in_memory() -> Self {
        CollectionDb {
            path: None,
            records: Vec::new(),
            next_id: 1,
        }
    }

    /// Stores one captured payload and returns the assigned record id.
    /// Durable immediately: the line is flushed before return, and any
    /// storage failure propagates (collection loss is unacceptable).
    pub fn append(&mut self, draft: RecordDraft) -> Result<u64> {
        let record = CollectionRecord {
            record_id: self.next_id,
            tick: draft.tick,
            network_id: draft.network_id,
            inspector_id: draft.inspector_id,
            honeypot_id: draft.honeypot_id,
            template_name: draft.template_name,
            payload_bytes: hex::encode(&draft.payload.bytes),
            ground_truth_family: draft.payload.family_id,
            anomaly: draft.anomaly,
        };
        if let Some(path) = &self.path {
            let mut file = OpenOptions::new().create(true).append(true).open(path)?;
            let line = serde_json::to_string(&record)
                .map_err(|e| Error::scenario(format!("unserializable record: {e}")))?;
            writeln!(file, "{line}")?;
            file.flush()?;
        }
        self.next_id += 1;
        self.records.push(record);
        Ok(self.next_id - 1)
    }

    pub fn records(&self) -> &[CollectionRecord] {
        &self.records
    }

    /// Whether this exact payload from this family on this network is
    /// already stored — the dedup key keeping each distinct extracted
    /// instance in the database exactly once.
    pub fn contains_instance(&self, network: NetworkId, family: &str, bytes: &[u8]) -> bool {
        let hex = hex::encode(bytes);
        self.records.iter().any(|r| {
            r.network_id == network && r.ground_truth_family == family && r.payload_bytes == hex
        })
    }

    /// Number of pairwise-distinct payload byte strings among records of
    /// one family.
    pub fn distinct_instances(&self, family: &str) -> u64 {
        let mut seen: Vec<&str> = self
            .records
            .iter()
            .filter(|r| r.ground_truth_family == family)
            .map(|r| r.payload_bytes.as_str())
            .collect();
        seen.sort();
        seen.dedup();
        seen.len() as u64
    }

    pub fn by_network(&self, network: NetworkId) -> Vec<&CollectionRecord> {
        self.records
            .iter()
            .filter(|r| r.network_id == network)
            .collect()
    }

    pub fn by_family(&self, family: &str) -> Vec<&CollectionRecord> {
        self.records
            .iter()
            .filter(|r| r.ground_truth_family == family)
            .collect()
    }

    /// Records captured in the inclusive tick range.
    pub fn in_tick_range(&self, from: Tick, to: Tick) -> Vec<&CollectionRecord> {
        self.records
            .iter()
            .filter(|r| r.tick >= from && r.tick <= to)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draft(family: &str, nonce: u64, bytes: &[u8], network: NetworkId, tick: Tick) -> RecordDraft {
        RecordDraft {
            tick,
            network_id: network,
            inspector_id: InspectorId(1),
            honeypot_id: VmId(5),
            template_name: "xp".into(),
            payload: Payload {
                bytes: bytes.to_vec(),
                family_id: family.into(),
                instance_nonce: nonce,
            },
            anomaly: AnomalyReport {
                vm: VmId(5),
                tick,
                unknown_processes: vec!["w.exe".into()],
                unknown_modules: vec![],
                hidden_processes: vec![],
                changed_disk_areas: vec![(0, 4)],
                changed_files: vec![],
                restore_epoch: 0,
            },
        }
    }

    #[test]
    fn ids_start_at_one_and_grow() {
        let mut db = CollectionDb::in_memory();
        let a = db.append(draft("f", 1, b"aa", NetworkId(1), Tick(3))).unwrap();
        let b = db.append(draft("f", 2, b"bb", NetworkId(1), Tick(4))).unwrap();
        assert_eq!((a, b), (1, 2));
        assert_eq!(db.records().len(), 2);
    }

    #[test]
    fn reopen_preserves_records_and_continues_numbering() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("collections.jsonl");
        {
            let mut db = CollectionDb::open(&path).unwrap();
            db.append(draft("f", 7, b"xyz", NetworkId(2), Tick(10))).unwrap();
            db.append(draft("g", 8, b"pqr", NetworkId(2), Tick(11))).unwrap();
        }
        let mut db = CollectionDb::open(&path).unwrap();
        assert_eq!(db.records().len(), 2);
        assert_eq!(db.records()[0].payload_bytes, hex::encode(b"xyz"));
        assert_eq!(db.records()[0].anomaly.unknown_processes, vec!["w.exe"]);
        let id = db.append(draft("f", 9, b"zz", NetworkId(2), Tick(12))).unwrap();
        assert_eq!(id, 3);
        assert!(db.contains_instance(NetworkId(2), "f", b"xyz"));
    }

    #[test]
    fn hundred_appends_read_back_in_id_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("collections.jsonl");
        {
            let mut db = CollectionDb::open(&path).unwrap();
            for i in 0..100u64 {
                db.append(draft("f", i, &i.to_le_bytes(), NetworkId(1), Tick(i)))
                    .unwrap();
            }
        }
        let db = CollectionDb::open(&path).unwrap();
        let ids: Vec<u64> = db.records().iter().map(|r| r.record_id).collect();
        assert_eq!(ids, (1..=100).collect::<Vec<u64>>());
    }

    #[test]
    fn corrupt_line_fails_open() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("collections.jsonl");
        std::fs::write(&path, "{not json}\n").unwrap();
        assert!(CollectionDb::open(&path).is_err());
    }

    #[test]
    fn distinct_counts_bytes_within_a_family() {
        let mut db = CollectionDb::in_memory();
        // Identical bytes under two nonces: one distinct instance.
        db.append(draft("f", 1, b"same", NetworkId(1), Tick(1))).unwrap();
        db.append(draft("f", 2, b"same", NetworkId(2), Tick(2))).unwrap();
        db.append(draft("f", 3, b"diff", NetworkId(1), Tick(3))).unwrap();
        db.append(draft("g", 4, b"same", NetworkId(1), Tick(4))).unwrap();
        assert_eq!(db.distinct_instances("f"), 2);
        assert_eq!(db.distinct_instances("g"), 1);
        assert_eq!(db.distinct_instances("missing"), 0);
        // Dedup key is per network: net2's copy of "same" is separate.
        assert!(db.contains_instance(NetworkId(1), "f", b"same"));
        assert!(db.contains_instance(NetworkId(2), "f", b"same"));
        assert!(!db.contains_instance(NetworkId(2), "f", b"diff"));
    }

    #[test]
    fn queries_filter_by_network_family_and_tick() {
        let mut db = CollectionDb::in_memory();
        db.append(draft("f", 1, b"a", NetworkId(1), Tick(5))).unwrap();
        db.append(draft("g", 2, b"b", NetworkId(2), Tick(6))).unwrap();
        db.append(draft("f", 3, b"c", NetworkId(1), Tick(9))).unwrap();
        assert_eq!(db.by_network(NetworkId(1)).len(), 2);
        assert_eq!(db.by_network(NetworkId(9)).len(), 0);
        assert_eq!(db.by_family("g").len(), 1);
        let ranged = db.in_tick_range(Tick(6), Tick(9));
        assert_eq!(ranged.len(), 2);
        assert!(ranged.iter().all(|r| r.tick >= Tick(6) && r.tick <= Tick(9)));
    }

    #[test]
    fn payload_round_trips_through_hex() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("collections.jsonl");
        let bytes: Vec<u8> = (0..=255).collect();
        {
            let mut db = CollectionDb::open(&path).unwrap();
            db.append(draft("f", 1, &bytes, NetworkId(1), Tick(1))).unwrap();
        }
        let db = CollectionDb::open(&path).unwrap();
        assert_eq!(hex::decode(&db.records()[0].payload_bytes).unwrap(), bytes);
    }
}
