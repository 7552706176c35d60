//! Existing-domain collision auditing: probes DNS for each generated
//! label under the configured TLDs, with a persistent cache, token-bucket
//! rate limiting, bounded concurrency, and a fully hermetic offline
//! zone-list mode.

pub mod dns;

use std::collections::{HashMap, HashSet, VecDeque};
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::sampler::DomainBatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Existence {
    Exists,
    Absent,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictSource {
    Dns,
    Cache,
    Zonefile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TldStatus {
    pub tld: String,
    pub status: Existence,
    pub source: VerdictSource,
}

/// Per-label existence verdict: one status per configured TLD.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExistenceVerdict {
    pub label: String,
    pub statuses: Vec<TldStatus>,
    /// Unix seconds; 0 in offline mode so runs stay byte-reproducible.
    pub checked_at: u64,
}

impl ExistenceVerdict {
    /// Collision rule: the label collides if it exists under ANY TLD.
    pub fn exists_any(&self) -> bool {
        self.statuses.iter().any(|s| s.status == Existence::Exists)
    }

    pub fn any_unknown(&self) -> bool {
        self.statuses.iter().any(|s| s.status == Existence::Unknown)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeMode {
    Online,
    Offline,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub tlds: Vec<String>,
    /// Resolver endpoints tried in rotation.
    pub resolvers: Vec<std::net::SocketAddr>,
    pub max_inflight: usize,
    pub qps_limit: f64,
    pub timeout_ms: u64,
    pub retries: usize,
    pub cache_path: Option<PathBuf>,
    pub cache_ttl_secs: u64,
    pub mode: ProbeMode,
    /// Zone-list files (one FQDN per line) for offline mode.
    pub zone_files: Vec<PathBuf>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            tlds: vec!["com".into(), "org".into(), "net".into()],
            resolvers: vec!["8.8.8.8:53".parse().unwrap(), "1.1.1.1:53".parse().unwrap()],
            max_inflight: 8,
            qps_limit: 20.0,
            timeout_ms: 3000,
            retries: 2,
            cache_path: None,
            cache_ttl_secs: 30 * 24 * 3600,
            mode: ProbeMode::Offline,
            zone_files: Vec::new(),
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tlds.is_empty() {
            return Err(Error::Config("probe needs at least one TLD".into()));
        }
        if self.max_inflight == 0 {
            return Err(Error::Config("max_inflight must be at least 1".into()));
        }
        if self.qps_limit <= 0.0 {
            return Err(Error::Config("qps_limit must be positive".into()));
        }
        if self.mode == ProbeMode::Online && self.resolvers.is_empty() {
            return Err(Error::Config("online mode needs at least one resolver".into()));
        }
        Ok(())
    }
}

/// Token bucket: capacity `burst`, refill `qps` per second. `take`
/// blocks until a token is available.
#[derive(Debug)]
pub struct TokenBucket {
    qps: f64,
    burst: f64,
    tokens: f64,
    last: Instant,
}

impl TokenBucket {
    pub fn new(qps: f64, burst: usize) -> Self {
        let burst = burst.max(1) as f64;
        Self { qps, burst, tokens: burst, last: Instant::now() }
    }

    fn refill(&mut self) {
        let now = Instant::now();
        let dt = now.duration_since(self.last).as_secs_f64();
        self.last = now;
        self.tokens = (self.tokens + dt * self.qps).min(self.burst);
    }

    /// Duration to wait before a token is available; takes it when free.
    fn try_take(&mut self) -> Option<Duration> {
        self.refill();
        if self.tokens >= 1.0 {
            self.tokens -= 1.0;
            None
        } else {
            Some(Duration::from_secs_f64((1.0 - self.tokens) / self.qps))
        }
    }

    pub fn take(&mut self) {
        while let Some(wait) = self.try_take() {
            std::thread::sleep(wait.min(Duration::from_millis(50)));
        }
    }
}

/// Blocking take against a shared bucket without holding the lock while
/// sleeping.
fn take_shared(bucket: &Mutex<TokenBucket>) {
    loop {
        let wait = bucket.lock().expect("bucket lock").try_take();
        match wait {
            None => return,
            Some(d) => std::thread::sleep(d.min(Duration::from_millis(50))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheRecord {
    label: String,
    tld: String,
    status: Existence,
    ts: u64,
}

/// Append-friendly on-disk cache keyed by (label, tld).
struct Cache {
    entries: HashMap<(String, String), (Existence, u64)>,
    path: Option<PathBuf>,
}

impl Cache {
    fn load(path: Option<&PathBuf>) -> Result<Self> {
        let mut entries = HashMap::new();
        if let Some(path) = path {
            if path.exists() {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                for line in text.lines().filter(|l| !l.trim().is_empty()) {
                    let rec: CacheRecord = serde_json::from_str(line)
                        .map_err(|e| Error::Config(format!("bad cache line: {e}")))?;
                    entries.insert((rec.label, rec.tld), (rec.status, rec.ts));
                }
            }
        }
        Ok(Self { entries, path: path.cloned() })
    }

    fn get(&self, label: &str, tld: &str, now: u64, ttl: u64) -> Option<Existence> {
        self.entries.get(&(label.to_string(), tld.to_string())).and_then(|&(status, ts)| {
            (now.saturating_sub(ts) <= ttl).then_some(status)
        })
    }

    fn put(&mut self, label: &str, tld: &str, status: Existence, now: u64) -> Result<()> {
        self.entries.insert((label.to_string(), tld.to_string()), (status, now));
        if let Some(path) = &self.path {
            let rec = CacheRecord {
                label: label.to_string(),
                tld: tld.to_string(),
                status,
                ts: now,
            };
            let mut file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            let line = serde_json::to_string(&rec)
                .map_err(|e| Error::Config(format!("cache encode: {e}")))?;
            writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// The probe engine. Zone files and the cache load once at construction;
/// probes then run hermetically (offline) or against DNS (online) under
/// the shared rate limiter.
pub struct Prober {
    cfg: ProbeConfig,
    zones: HashSet<String>,
    cache: Mutex<Cache>,
    bucket: Mutex<TokenBucket>,
    network_queries: AtomicU64,
    query_id: AtomicU64,
}

impl Prober {
    pub fn new(cfg: ProbeConfig) -> Result<Self> {
        cfg.validate()?;
        let mut zones = HashSet::new();
        for path in &cfg.zone_files {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            zones.extend(
                text.lines()
                    .map(|l| l.trim().trim_end_matches('.').to_ascii_lowercase())
                    .filter(|l| !l.is_empty() && !l.starts_with('#')),
            );
        }
        if cfg.mode == ProbeMode::Offline && zones.is_empty() {
            return Err(Error::Config("offline mode needs at least one zone file".into()));
        }
        let cache = Cache::load(cfg.cache_path.as_ref())?;
        let bucket = TokenBucket::new(cfg.qps_limit, cfg.max_inflight);
        Ok(Self {
            cfg,
            zones,
            cache: Mutex::new(cache),
            bucket: Mutex::new(bucket),
            network_queries: AtomicU64::new(0),
            query_id: AtomicU64::new(SplitMix64::new(0xD15C0).next_u64()),
        })
    }

    pub fn config(&self) -> &ProbeConfig {
        &self.cfg
    }

    /// DNS queries actually sent (cache hits and zone lookups cost none).
    pub fn network_queries(&self) -> u64 {
        self.network_queries.load(Ordering::Relaxed)
    }

    fn now(&self) -> u64 {
        match self.cfg.mode {
            ProbeMode::Offline => 0,
            ProbeMode::Online => {
                SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
            }
        }
    }

    /// Existence of `label.tld` via zone list or DNS (NS query, A
    /// fallback); NXDOMAIN means absent, exhausted retries mean unknown.
    fn probe_fqdn(&self, label: &str, tld: &str) -> (Existence, VerdictSource) {
        let now = self.now();
        if let Some(hit) =
            self.cache.lock().expect("cache lock").get(label, tld, now, self.cfg.cache_ttl_secs)
        {
            return (hit, VerdictSource::Cache);
        }

        let fqdn = format!("{label}.{tld}");
        let (status, source) = match self.cfg.mode {
            ProbeMode::Offline => {
                let status = if self.zones.contains(&fqdn) {
                    Existence::Exists
                } else {
                    Existence::Absent
                };
                (status, VerdictSource::Zonefile)
            }
            ProbeMode::Online => (self.resolve_online(&fqdn), VerdictSource::Dns),
        };

        if status != Existence::Unknown {
            // Transient failures are never cached.
            let _ = self.cache.lock().expect("cache lock").put(label, tld, status, now);
        }
        (status, source)
    }

    fn resolve_online(&self, fqdn: &str) -> Existence {
        // NS first (delegation is the registration signal), A as fallback.
        match self.query_type(fqdn, dns::TYPE_NS) {
            Some(Existence::Exists) => Existence::Exists,
            Some(Existence::Absent) => {
                // NOERROR with no NS records: registered names may still
                // only hold address records.
                match self.query_type(fqdn, dns::TYPE_A) {
                    Some(status) => status,
                    None => Existence::Unknown,
                }
            }
            Some(Existence::Unknown) | None => Existence::Unknown,
        }
    }

    /// One resolution attempt cycle for a record type; `None` means every
    /// endpoint failed.
    fn query_type(&self, fqdn: &str, qtype: u16) -> Option<Existence> {
        let timeout = Duration::from_millis(self.cfg.timeout_ms);
        for attempt in 0..=self.cfg.retries {
            for (i, resolver) in self.cfg.resolvers.iter().enumerate() {
                let _ = (attempt, i);
                take_shared(&self.bucket);
                let id = (self.query_id.fetch_add(1, Ordering::Relaxed) & 0xFFFF) as u16;
                let Ok(query) = dns::build_query(id, fqdn, qtype) else {
                    return Some(Existence::Unknown);
                };
                self.network_queries.fetch_add(1, Ordering::Relaxed);
                let Ok(bytes) = dns::query_udp(*resolver, &query, timeout) else {
                    continue;
                };
                let Ok(mut response) = dns::parse_response(&bytes, id) else {
                    continue;
                };
                if response.truncated {
                    self.network_queries.fetch_add(1, Ordering::Relaxed);
                    match dns::query_tcp(*resolver, &query, timeout) {
                        Ok(tcp_bytes) => match dns::parse_response(&tcp_bytes, id) {
                            Ok(r) => response = r,
                            Err(_) => continue,
                        },
                        Err(_) => continue,
                    }
                }
                match response.rcode {
                    dns::RCODE_NXDOMAIN => return Some(Existence::Absent),
                    dns::RCODE_NOERROR => {
                        let has_answer =
                            response.answer_types.iter().any(|&t| t == qtype || t == 5);
                        return Some(if has_answer { Existence::Exists } else { Existence::Absent });
                    }
                    _ => continue, // SERVFAIL and friends: retry
                }
            }
        }
        None
    }

    /// Checks one label under every configured TLD.
    pub fn check_label(&self, label: &str) -> Result<ExistenceVerdict> {
        let vocab = Vocabulary::standard();
        if !vocab.is_valid_label(label) {
            return Err(Error::Param(format!("label {label:?} is not a valid in-vocabulary label")));
        }
        let statuses = self
            .cfg
            .tlds
            .iter()
            .map(|tld| {
                let (status, source) = self.probe_fqdn(label, tld);
                TldStatus { tld: tld.clone(), status, source }
            })
            .collect();
        Ok(ExistenceVerdict { label: label.to_string(), statuses, checked_at: self.now() })
    }
}

/// Batch liveness summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LivenessReport {
    /// colliding / checked; unknowns excluded from the denominator.
    pub rate: f64,
    pub colliding: usize,
    pub checked: usize,
    pub unknown: usize,
    /// Set when more than half the attempted verdicts were unknown.
    pub inconclusive: bool,
    pub verdicts: Vec<ExistenceVerdict>,
}

/// Deduplicates the batch, probes every label, and aggregates the
/// existing-domain collision rate.
pub fn batch_existing_rate(batch: &DomainBatch, prober: &Prober) -> Result<LivenessReport> {
    if batch.domains.is_empty() {
        return Err(Error::Param("batch_existing_rate needs a non-empty batch".into()));
    }
    let mut unique: Vec<&String> = Vec::new();
    let mut seen = HashSet::new();
    for d in &batch.domains {
        if seen.insert(d.as_str()) {
            unique.push(d);
        }
    }

    let workers = prober.config().max_inflight.min(unique.len()).max(1);
    let mut verdicts: Vec<ExistenceVerdict> = if workers == 1 {
        let mut out = Vec::with_capacity(unique.len());
        for label in &unique {
            out.push(prober.check_label(label)?);
        }
        out
    } else {
        let queue: Mutex<VecDeque<&String>> = Mutex::new(unique.iter().copied().collect());
        let results: Mutex<Vec<ExistenceVerdict>> = Mutex::new(Vec::with_capacity(unique.len()));
        std::thread::scope(|scope| -> Result<()> {
            let mut handles = Vec::new();
            for _ in 0..workers {
                handles.push(scope.spawn(|| -> Result<()> {
                    loop {
                        let label = queue.lock().expect("queue lock").pop_front();
                        let Some(label) = label else { return Ok(()) };
                        let verdict = prober.check_label(label)?;
                        results.lock().expect("results lock").push(verdict);
                    }
                }));
            }
            for handle in handles {
                handle.join().expect("probe worker panicked")?;
            }
            Ok(())
        })?;
        results.into_inner().expect("results lock")
    };
    // Aggregation is order-independent; fix a canonical order anyway.
    verdicts.sort_by(|a, b| a.label.cmp(&b.label));

    let mut colliding = 0usize;
    let mut checked = 0usize;
    let mut unknown = 0usize;
    for v in &verdicts {
        if v.exists_any() {
            colliding += 1;
            checked += 1;
        } else if v.any_unknown() {
            unknown += 1;
        } else {
            checked += 1;
        }
    }
    let inconclusive = unknown * 2 > verdicts.len();
    let rate = if checked > 0 { colliding as f64 / checked as f64 } else { 0.0 };
    Ok(LivenessReport { rate, colliding, checked, unknown, inconclusive, verdicts })
}

#[cfg(test)]
mod tests {
    use super::*;
    

    fn zone_fixture(entries: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# fixture zone list").unwrap();
        for e in entries {
            writeln!(f, "{e}").unwrap();
        }
        f.flush().unwrap();
        f
    }

    fn offline_config(zone: &tempfile::NamedTempFile) -> ProbeConfig {
        ProbeConfig {
            zone_files: vec![zone.path().to_path_buf()],
            mode: ProbeMode::Offline,
            ..Default::default()
        }
    }

    #[test]
    fn offline_zone_lookup() {
        let zone = zone_fixture(&["example.com", "taken.org"]);
        let prober = Prober::new(offline_config(&zone)).unwrap();

        let v = prober.check_label("example").unwrap();
        assert_eq!(v.statuses.len(), 3);
        assert_eq!(v.statuses[0].tld, "com");
        assert_eq!(v.statuses[0].status, Existence::Exists);
        assert_eq!(v.statuses[1].status, Existence::Absent); // org
        assert_eq!(v.statuses[2].status, Existence::Absent); // net
        assert!(v.exists_any());
        assert_eq!(v.checked_at, 0);

        let v = prober.check_label("nonexample").unwrap();
        assert!(!v.exists_any());

        assert_eq!(prober.network_queries(), 0, "offline mode must be network-free");
        assert!(prober.check_label("BAD_LABEL").is_err());
    }

    #[test]
    fn batch_rate_on_fixture() {
        // Half the labels exist somewhere -> rate 0.5.
        let zone = zone_fixture(&["alpha.com", "beta.net"]);
        let prober = Prober::new(offline_config(&zone)).unwrap();
        let batch = DomainBatch::from_labels(
            vec!["alpha".into(), "beta".into(), "gamma".into(), "delta".into()],
            "fixture",
            0,
        );
        let report = batch_existing_rate(&batch, &prober).unwrap();
        assert_eq!(report.rate, 0.5);
        assert_eq!(report.colliding, 2);
        assert_eq!(report.checked, 4);
        assert_eq!(report.unknown, 0);
        assert!(!report.inconclusive);
        assert_eq!(prober.network_queries(), 0);
    }

    #[test]
    fn batch_dedups_before_probing() {
        let zone = zone_fixture(&["dup.com"]);
        let prober = Prober::new(offline_config(&zone)).unwrap();
        let batch = DomainBatch::from_labels(
            vec!["dup".into(), "dup".into(), "dup".into(), "fresh".into()],
            "fixture",
            0,
        );
        let report = batch_existing_rate(&batch, &prober).unwrap();
        assert_eq!(report.verdicts.len(), 2);
        assert_eq!(report.rate, 0.5);
    }

    #[test]
    fn cache_replay_issues_zero_network_queries() {
        // An online-mode prober whose cache already covers every query
        // never touches the (unroutable) resolver.
        let dir = tempfile::tempdir().unwrap();
        let cache_path = dir.path().join("probe-cache.jsonl");
        let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap().as_secs();
        {
            let mut f = std::fs::File::create(&cache_path).unwrap();
            for label in ["one", "two"] {
                for tld in ["com", "org", "net"] {
                    let status = if label == "one" && tld == "com" { "exists" } else { "absent" };
                    writeln!(
                        f,
                        "{{\"label\":\"{label}\",\"tld\":\"{tld}\",\"status\":\"{status}\",\"ts\":{now}}}"
                    )
                    .unwrap();
                }
            }
        }

        let cfg = ProbeConfig {
            mode: ProbeMode::Online,
            resolvers: vec!["127.0.0.1:9".parse().unwrap()],
            cache_path: Some(cache_path),
            ..Default::default()
        };
        let prober = Prober::new(cfg).unwrap();
        let batch = DomainBatch::from_labels(vec!["one".into(), "two".into()], "cached", 0);
        let report = batch_existing_rate(&batch, &prober).unwrap();
        assert_eq!(prober.network_queries(), 0, "cache replay must be network-free");
        assert_eq!(report.rate, 0.5);
        for v in &report.verdicts {
            assert!(v.statuses.iter().all(|s| s.source == VerdictSource::Cache));
        }
    }

    #[test]
    fn expired_cache_entries_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let cache_path = dir.path().join("stale.jsonl");
        {
            let mut f = std::fs::File::create(&cache_path).unwrap();
            // ts 10: far beyond any TTL relative to now.
            writeln!(f, "{{\"label\":\"old\",\"tld\":\"com\",\"status\":\"exists\",\"ts\":10}}")
                .unwrap();
        }
        let zone = zone_fixture(&["unrelated.com"]);
        let mut cfg = offline_config(&zone);
        cfg.cache_path = Some(cache_path);
        // Offline "now" is 0, so ts 10 is in the future; use a tiny TTL and
        // a doctored entry instead: offline now=0 means age = 0 - 10
        // saturates to 0, which would count as fresh. Check the TTL logic
        // directly instead.
        let cache = Cache::load(cfg.cache_path.as_ref()).unwrap();
        assert_eq!(cache.get("old", "com", 10_000_000, 100), None);
        assert_eq!(cache.get("old", "com", 50, 100), Some(Existence::Exists));
    }

    #[test]
    fn rate_limiter_enforces_qps() {
        let qps = 200.0;
        let burst = 10;
        let mut bucket = TokenBucket::new(qps, burst);
        let n = 120;
        let start = Instant::now();
        let mut stamps = Vec::with_capacity(n);
        for _ in 0..n {
            bucket.take();
            stamps.push(start.elapsed());
        }
        let total = start.elapsed().as_secs_f64();
        let min_expected = (n as f64 - burst as f64) / qps;
        assert!(
            total >= min_expected * 0.95,
            "{n} takes finished in {total:.3}s, below the rate floor {min_expected:.3}s"
        );

        // No 1-second window may exceed qps + burst.
        for (i, t0) in stamps.iter().enumerate() {
            let window_end = *t0 + Duration::from_secs(1);
            let in_window = stamps[i..].iter().take_while(|t| **t <= window_end).count();
            assert!(
                in_window as f64 <= qps + burst as f64 + 1.0,
                "window starting at {t0:?} saw {in_window} queries"
            );
        }
    }

    #[test]
    fn unknown_heavy_runs_are_flagged_inconclusive() {
        // Online mode against an unroutable resolver with zero retries:
        // every verdict is unknown.
        let cfg = ProbeConfig {
            mode: ProbeMode::Online,
            resolvers: vec!["127.0.0.1:9".parse().unwrap()],
            retries: 0,
            timeout_ms: 50,
            qps_limit: 1000.0,
            ..Default::default()
        };
        let prober = Prober::new(cfg).unwrap();
        let batch = DomainBatch::from_labels(vec!["ghost".into()], "unreachable", 0);
        let report = batch_existing_rate(&batch, &prober).unwrap();
        assert_eq!(report.unknown, 1);
        assert_eq!(report.checked, 0);
        assert!(report.inconclusive);
        assert_eq!(report.rate, 0.0);
    }

    #[test]
    fn probe_config_validation() {
        let mut cfg = ProbeConfig::default();
        cfg.tlds.clear();
        assert!(cfg.validate().is_err());

        let cfg = ProbeConfig { qps_limit: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());

        let cfg = ProbeConfig { max_inflight: 0, ..Default::default() };
        assert!(cfg.validate().is_err());

        // Offline mode without zone files fails at construction.
        assert!(Prober::new(ProbeConfig::default()).is_err());
    }
}
