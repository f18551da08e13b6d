//! Segregated state stores: in-process session store, external lease-based
//! session store with checksums, and a transactional row store.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::runtime::ComponentId;
use crate::simcore::{fnv1a, Millis};

pub const DEFAULT_SESSION_LEASE_MS: Millis = 30 * 60 * 1000;
pub const EXTERNAL_LATENCY_MS: Millis = 13;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StoreError {
    #[error("session store is unavailable (hosting process down)")]
    Unavailable,
    #[error("transaction {0} is not open")]
    UnknownTx(u64),
    #[error("row {0:?} is not tainted")]
    NotTainted(RowKey),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreKind {
    InProcess,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Survival {
    pub microreboot: bool,
    pub process_restart: bool,
    pub node_reboot: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreProfile {
    pub access_latency_ms: Millis,
    pub survives: Survival,
}

impl StoreProfile {
    pub fn for_kind(kind: StoreKind) -> Self {
        match kind {
            StoreKind::InProcess => Self {
                access_latency_ms: 0,
                survives: Survival {
                    microreboot: true,
                    process_restart: false,
                    node_reboot: false,
                },
            },
            StoreKind::External => Self {
                access_latency_ms: EXTERNAL_LATENCY_MS,
                survives: Survival {
                    microreboot: true,
                    process_restart: true,
                    node_reboot: true,
                },
            },
        }
    }
}

pub fn checksum(payload: u64) -> u32 {
    let h = fnv1a(&payload.to_le_bytes());
    (h ^ (h >> 32)) as u32
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionRecord {
    pub session_key: u64,
    pub payload: u64,
    pub lease_expires_at: Millis,
    pub checksum: u32,
    pub home_store: StoreKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionRead {
    Payload(u64),
    /// Checksum mismatch; the record was deleted.
    Discarded,
    Missing,
}

#[derive(Debug, Clone)]
pub struct SessionStore {
    pub kind: StoreKind,
    pub profile: StoreProfile,
    pub lease_ms: Millis,
    pub available: bool,
    records: BTreeMap<u64, SessionRecord>,
}

impl SessionStore {
    pub fn new(kind: StoreKind) -> Self {
        Self {
            kind,
            profile: StoreProfile::for_kind(kind),
            lease_ms: DEFAULT_SESSION_LEASE_MS,
            available: true,
            records: BTreeMap::new(),
        }
    }

    pub fn with_latency(mut self, ms: Millis) -> Self {
        self.profile.access_latency_ms = ms;
        self
    }

    pub fn latency(&self) -> Millis {
        self.profile.access_latency_ms
    }

    /// Atomically stores `payload` with a fresh checksum and lease.
    pub fn session_write(&mut self, key: u64, payload: u64, now: Millis) -> Result<Millis, StoreError> {
        if !self.available {
            return Err(StoreError::Unavailable);
        }
        self.records.insert(
            key,
            SessionRecord {
                session_key: key,
                payload,
                lease_expires_at: now + self.lease_ms,
                checksum: checksum(payload),
                home_store: self.kind,
            },
        );
        Ok(self.profile.access_latency_ms)
    }

    pub fn session_read(&mut self, key: u64, now: Millis) -> SessionRead {
        let Some(rec) = self.records.get(&key) else {
            return SessionRead::Missing;
        };
        if rec.lease_expires_at <= now {
            self.records.remove(&key);
            return SessionRead::Missing;
        }
        if self.kind == StoreKind::External && checksum(rec.payload) != rec.checksum {
            self.records.remove(&key);
            return SessionRead::Discarded;
        }
        let payload = rec.payload;
        // Access renews the lease; only idle sessions expire.
        if let Some(r) = self.records.get_mut(&key) {
            r.lease_expires_at = now + self.lease_ms;
        }
        SessionRead::Payload(payload)
    }

    pub fn session_delete(&mut self, key: u64) -> bool {
        self.records.remove(&key).is_some()
    }

    /// Flips payload bits without refreshing the checksum.
    pub fn corrupt(&mut self, key: u64) -> bool {
        match self.records.get_mut(&key) {
            Some(r) => {
                r.payload ^= 0x5a5a_5a5a_5a5a_5a5a;
                true
            }
            None => false,
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = u64> + '_ {
        self.records.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn store_gc(&mut self, now: Millis) -> usize {
        let before = self.records.len();
        self.records.retain(|_, r| r.lease_expires_at > now);
        before - self.records.len()
    }

    /// Destroys all contents (the hosting process died).
    pub fn wipe(&mut self) {
        self.records.clear();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RowKey {
    pub table: ComponentId,
    pub row: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxRecord {
    pub value: u64,
    pub tainted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxResult {
    Committed,
    Aborted,
}

#[derive(Debug, Clone, Default)]
struct OpenTx {
    participants: BTreeSet<ComponentId>,
    writes: Vec<(RowKey, TxRecord)>,
}

/// Persistent transactional row store; survives every reboot level.
#[derive(Debug, Clone, Default)]
pub struct TxStore {
    rows: BTreeMap<RowKey, TxRecord>,
    open: BTreeMap<u64, OpenTx>,
    next_tx: u64,
    pub committed: u64,
    pub aborted: u64,
}

impl TxStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn begin(&mut self) -> u64 {
        let id = self.next_tx;
        self.next_tx += 1;
        self.open.insert(id, OpenTx::default());
        id
    }

    pub fn is_open(&self, tx: u64) -> bool {
        self.open.contains_key(&tx)
    }

    pub fn enlist(&mut self, tx: u64, participant: ComponentId) -> Result<(), StoreError> {
        self.open
            .get_mut(&tx)
            .ok_or(StoreError::UnknownTx(tx))?
            .participants
            .insert(participant);
        Ok(())
    }

    pub fn participants(&self, tx: u64) -> Option<&BTreeSet<ComponentId>> {
        self.open.get(&tx).map(|t| &t.participants)
    }

    pub fn write(&mut self, tx: u64, key: RowKey, value: u64, tainted: bool) -> Result<(), StoreError> {
        self.open
            .get_mut(&tx)
            .ok_or(StoreError::UnknownTx(tx))?
            .writes
            .push((key, TxRecord { value, tainted }));
        Ok(())
    }

    pub fn commit(&mut self, tx: u64) -> Result<TxResult, StoreError> {
        let t = self.open.remove(&tx).ok_or(StoreError::UnknownTx(tx))?;
        for (k, v) in t.writes {
            let tainted = v.tainted || self.rows.get(&k).is_some_and(|r| r.tainted);
            self.rows.insert(k, TxRecord { value: v.value, tainted });
        }
        self.committed += 1;
        Ok(TxResult::Committed)
    }

    pub fn abort(&mut self, tx: u64) -> Result<TxResult, StoreError> {
        self.open.remove(&tx).ok_or(StoreError::UnknownTx(tx))?;
        self.aborted += 1;
        Ok(TxResult::Aborted)
    }

    /// Aborts every open transaction with a participant in `members`.
    pub fn abort_participants(&mut self, members: &BTreeSet<ComponentId>) -> Vec<u64> {
        let ids: Vec<u64> = self
            .open
            .iter()
            .filter(|(_, t)| !t.participants.is_disjoint(members))
            .map(|(id, _)| *id)
            .collect();
        for id in &ids {
            self.open.remove(id);
            self.aborted += 1;
        }
        ids
    }

    pub fn abort_all(&mut self) -> usize {
        let n = self.open.len();
        self.aborted += n as u64;
        self.open.clear();
        n
    }

    /// One-shot atomic write set owned by `owner`.
    pub fn tx_execute(&mut self, writes: &[(RowKey, u64)], owner: ComponentId, tainted: bool) -> TxResult {
        let tx = self.begin();
        self.enlist(tx, owner).expect("fresh tx");
        for &(k, v) in writes {
            self.write(tx, k, v, tainted).expect("fresh tx");
        }
        self.commit(tx).expect("fresh tx")
    }

    pub fn read(&self, key: RowKey) -> Option<TxRecord> {
        self.rows.get(&key).copied()
    }

    /// Marks every row of `table` tainted (wrong data committed directly).
    pub fn taint_table(&mut self, table: ComponentId) -> usize {
        let mut n = 0;
        for (_, r) in self.rows.range_mut(RowKey { table, row: 0 }..=RowKey { table, row: u64::MAX }) {
            r.tainted = true;
            n += 1;
        }
        n
    }

    pub fn tainted_rows(&self) -> impl Iterator<Item = RowKey> + '_ {
        self.rows.iter().filter(|(_, r)| r.tainted).map(|(k, _)| *k)
    }

    pub fn repair(&mut self, key: RowKey) -> Result<(), StoreError> {
        match self.rows.get_mut(&key) {
            Some(r) if r.tainted => {
                r.tainted = false;
                Ok(())
            }
            _ => Err(StoreError::NotTainted(key)),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut s = SessionStore::new(StoreKind::InProcess);
        assert_eq!(s.session_write(1, 42, 0), Ok(0));
        assert_eq!(s.session_read(1, 10), SessionRead::Payload(42));
    }

    #[test]
    fn external_latency_and_checksum() {
        let mut s = SessionStore::new(StoreKind::External);
        assert_eq!(s.session_write(7, 99, 0), Ok(13));
        s.corrupt(7);
        assert_eq!(s.session_read(7, 1), SessionRead::Discarded);
        assert_eq!(s.session_read(7, 2), SessionRead::Missing);
    }

    #[test]
    fn in_process_corruption_returned_as_is() {
        let mut s = SessionStore::new(StoreKind::InProcess);
        s.session_write(7, 99, 0).unwrap();
        s.corrupt(7);
        assert!(matches!(s.session_read(7, 1), SessionRead::Payload(p) if p != 99));
    }

    #[test]
    fn lease_expiry_and_gc() {
        let mut s = SessionStore::new(StoreKind::External);
        s.lease_ms = 100;
        for k in 0..8 {
            s.session_write(k, k, if k < 5 { 0 } else { 1_000 }).unwrap();
        }
        assert_eq!(s.store_gc(50), 0);
        assert_eq!(s.store_gc(100), 5);
        assert_eq!(s.len(), 3);
        assert_eq!(s.session_read(6, 1_100), SessionRead::Missing);
    }

    #[test]
    fn unavailable_store_rejects_writes() {
        let mut s = SessionStore::new(StoreKind::InProcess);
        s.available = false;
        assert_eq!(s.session_write(1, 1, 0), Err(StoreError::Unavailable));
    }

    #[test]
    fn tx_atomicity_and_abort() {
        let mut db = TxStore::new();
        let a = ComponentId(1);
        let k1 = RowKey { table: a, row: 1 };
        let k2 = RowKey { table: a, row: 2 };
        assert_eq!(db.tx_execute(&[(k1, 10), (k2, 20)], a, false), TxResult::Committed);
        assert_eq!(db.read(k2).unwrap().value, 20);

        let tx = db.begin();
        db.enlist(tx, a).unwrap();
        db.write(tx, k1, 11, false).unwrap();
        assert_eq!(db.abort_participants(&BTreeSet::from([a])), vec![tx]);
        assert_eq!(db.read(k1).unwrap().value, 10);
        assert!(db.commit(tx).is_err());
    }

    #[test]
    fn taint_persists_until_repair() {
        let mut db = TxStore::new();
        let a = ComponentId(3);
        let k = RowKey { table: a, row: 9 };
        db.tx_execute(&[(k, 1)], a, true);
        db.tx_execute(&[(k, 2)], a, false);
        assert_eq!(db.tainted_rows().collect::<Vec<_>>(), vec![k]);
        db.repair(k).unwrap();
        assert!(db.repair(k).is_err());
    }
}
