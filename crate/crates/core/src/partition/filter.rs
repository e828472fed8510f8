//! Movability reasoning behind one interface: a ground-truth oracle, a
//! noise-dialed corrupted oracle, the all-fixed ablation, and a remote
//! JSON-over-HTTP client.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::mask::Mask;

/// Candidate obstacle regions from the grounding detector.
#[derive(Clone, Debug, Default)]
pub struct CandidateSet {
    pub masks: Vec<Mask>,
}

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("movability filter unavailable: {0}")]
    Unavailable(String),
}

/// Decides which candidate masks belong to movable obstacles. The filter
/// returns indices into the candidate list; it never invents masks.
pub trait MovabilityFilter {
    fn filter(&mut self, prompt: &str, candidates: &CandidateSet)
        -> Result<Vec<usize>, FilterError>;
}

/// Reads the per-obstacle movability labels from the world.
#[derive(Clone, Debug, Default)]
pub struct GroundTruthFilter {
    movable_ids: HashMap<u32, bool>,
}

impl GroundTruthFilter {
    pub fn new(movable_ids: HashMap<u32, bool>) -> Self {
        Self { movable_ids }
    }
}

impl MovabilityFilter for GroundTruthFilter {
    fn filter(
        &mut self,
        _prompt: &str,
        candidates: &CandidateSet,
    ) -> Result<Vec<usize>, FilterError> {
        Ok(candidates
            .masks
            .iter()
            .enumerate()
            .filter(|(_, m)| {
                m.source_id
                    .map_or(false, |id| *self.movable_ids.get(&id).unwrap_or(&false))
            })
            .map(|(i, _)| i)
            .collect())
    }
}

/// Ground-truth oracle with independent per-mask Bernoulli corruption: a
/// movable candidate is dropped with `p_false_neg`, a fixed candidate kept
/// with `p_false_pos`.
#[derive(Clone, Debug)]
pub struct CorruptedFilter {
    truth: GroundTruthFilter,
    p_false_neg: f64,
    p_false_pos: f64,
    rng: ChaCha8Rng,
}

impl CorruptedFilter {
    pub fn new(
        movable_ids: HashMap<u32, bool>,
        p_false_neg: f64,
        p_false_pos: f64,
        seed: u64,
    ) -> Self {
        Self {
            truth: GroundTruthFilter::new(movable_ids),
            p_false_neg,
            p_false_pos,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x766c6d),
        }
    }
}

impl MovabilityFilter for CorruptedFilter {
    fn filter(
        &mut self,
        prompt: &str,
        candidates: &CandidateSet,
    ) -> Result<Vec<usize>, FilterError> {
        let truthful = self.truth.filter(prompt, candidates)?;
        let mut keep = Vec::new();
        for i in 0..candidates.masks.len() {
            let is_movable = truthful.contains(&i);
            let roll: f64 = self.rng.gen();
            let kept = if is_movable {
                roll >= self.p_false_neg
            } else {
                roll < self.p_false_pos
            };
            if kept {
                keep.push(i);
            }
        }
        Ok(keep)
    }
}

/// Hard-constraint ablation: nothing is ever movable.
#[derive(Clone, Copy, Debug, Default)]
pub struct AllFixedFilter;

impl MovabilityFilter for AllFixedFilter {
    fn filter(&mut self, _: &str, _: &CandidateSet) -> Result<Vec<usize>, FilterError> {
        Ok(Vec::new())
    }
}

#[derive(Serialize)]
struct RemoteCandidate<'a> {
    id: usize,
    caption: &'a str,
    bbox: [u32; 4],
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    prompt: &'a str,
    candidates: Vec<RemoteCandidate<'a>>,
}

#[derive(Deserialize)]
struct RemoteResponse {
    keep: Vec<usize>,
}

/// JSON-over-HTTP movability endpoint. Request:
/// `{"prompt": ..., "candidates": [{"id", "caption", "bbox": [x,y,w,h]}]}`,
/// response `{"keep": [id, ...]}`. Timeouts surface as filter-unavailable so
/// the caller keeps its stale memory.
#[derive(Clone, Debug)]
pub struct RemoteFilter {
    endpoint: String,
    timeout: Duration,
}

impl RemoteFilter {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout,
        }
    }
}

impl MovabilityFilter for RemoteFilter {
    fn filter(
        &mut self,
        prompt: &str,
        candidates: &CandidateSet,
    ) -> Result<Vec<usize>, FilterError> {
        let request = RemoteRequest {
            prompt,
            candidates: candidates
                .masks
                .iter()
                .enumerate()
                .map(|(id, m)| {
                    let bb = m.bbox();
                    RemoteCandidate {
                        id,
                        caption: &m.caption,
                        bbox: [bb.x, bb.y, bb.w, bb.h],
                    }
                })
                .collect(),
        };
        let body = serde_json::to_string(&request)
            .map_err(|e| FilterError::Unavailable(e.to_string()))?;
        let response = http_post_json(&self.endpoint, &body, self.timeout)?;
        let parsed: RemoteResponse = serde_json::from_str(&response)
            .map_err(|e| FilterError::Unavailable(format!("bad response: {e}")))?;
        let mut keep: Vec<usize> = parsed
            .keep
            .into_iter()
            .filter(|&i| i < candidates.masks.len())
            .collect();
        keep.sort_unstable();
        keep.dedup();
        Ok(keep)
    }
}

/// Minimal HTTP/1.1 POST with Content-Length framing. The offline toolchain
/// has no blocking HTTP client crate cached, and this endpoint is a single
/// JSON round trip.
fn http_post_json(endpoint: &str, body: &str, timeout: Duration) -> Result<String, FilterError> {
    let rest = endpoint
        .strip_prefix("http://")
        .ok_or_else(|| FilterError::Unavailable(format!("unsupported endpoint {endpoint}")))?;
    let (host_port, path) = match rest.find('/') {
        Some(i) => (&rest[..i], &rest[i..]),
        None => (rest, "/"),
    };
    let addr = host_port
        .to_socket_addrs()
        .map_err(|e| FilterError::Unavailable(e.to_string()))?
        .next()
        .ok_or_else(|| FilterError::Unavailable(format!("no address for {host_port}")))?;

    let stream = TcpStream::connect_timeout(&addr, timeout)
        .map_err(|e| FilterError::Unavailable(format!("connect: {e}")))?;
    stream
        .set_read_timeout(Some(timeout))
        .and_then(|_| stream.set_write_timeout(Some(timeout)))
        .map_err(|e| FilterError::Unavailable(e.to_string()))?;
    let mut stream = stream;

    let request = format!(
        "POST {path} HTTP/1.1\r\nHost: {host_port}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    stream
        .write_all(request.as_bytes())
        .map_err(|e| FilterError::Unavailable(format!("send: {e}")))?;

    let mut raw = Vec::new();
    stream
        .read_to_end(&mut raw)
        .map_err(|e| FilterError::Unavailable(format!("recv: {e}")))?;
    let text = String::from_utf8_lossy(&raw);
    let (head, rest) = text
        .split_once("\r\n\r\n")
        .ok_or_else(|| FilterError::Unavailable("malformed response".into()))?;
    let status = head.lines().next().unwrap_or_default();
    if !status.contains(" 200") {
        return Err(FilterError::Unavailable(format!("status: {status}")));
    }
    let content_length = head
        .lines()
        .find_map(|l| {
            let (k, v) = l.split_once(':')?;
            k.eq_ignore_ascii_case("content-length")
                .then(|| v.trim().parse::<usize>().ok())?
        })
        .unwrap_or(rest.len());
    Ok(rest[..content_length.min(rest.len())].to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(id: u32, caption: &str) -> Mask {
        Mask::from_pixels(32, 32, [(id, id), (id + 1, id)], caption, 0.0, Some(id)).unwrap()
    }

    fn candidates() -> CandidateSet {
        CandidateSet {
            masks: vec![mask(1, "box"), mask(2, "wall"), mask(3, "box")],
        }
    }

    fn truth_map() -> HashMap<u32, bool> {
        HashMap::from([(1, true), (2, false), (3, true)])
    }

    #[test]
    fn ground_truth_reads_world_labels() {
        let mut f = GroundTruthFilter::new(truth_map());
        assert_eq!(f.filter("push?", &candidates()).unwrap(), vec![0, 2]);
    }

    #[test]
    fn zero_noise_matches_ground_truth() {
        let mut truth = GroundTruthFilter::new(truth_map());
        let mut noisy = CorruptedFilter::new(truth_map(), 0.0, 0.0, 7);
        let c = candidates();
        assert_eq!(truth.filter("p", &c).unwrap(), noisy.filter("p", &c).unwrap());
    }

    #[test]
    fn false_negative_rate_concentrates() {
        // 10^4 movable candidates at p_false_neg = 0.25: retention 0.75 +- 0.02.
        let n = 10_000u32;
        let truth: HashMap<u32, bool> = (0..n).map(|i| (i, true)).collect();
        let masks: Vec<Mask> = (0..n)
            .map(|i| {
                Mask::from_pixels(128, 128, [(i % 128, i / 128)], "box", 0.0, Some(i)).unwrap()
            })
            .collect();
        let c = CandidateSet { masks };
        let mut total_kept = 0usize;
        let seeds = 8u64;
        for seed in 0..seeds {
            let mut f = CorruptedFilter::new(truth.clone(), 0.25, 0.0, seed);
            total_kept += f.filter("p", &c).unwrap().len();
        }
        let retained = total_kept as f64 / (f64::from(n) * seeds as f64);
        assert!((retained - 0.75).abs() < 0.02, "retained {retained}");
    }

    #[test]
    fn all_fixed_keeps_nothing() {
        assert!(AllFixedFilter.filter("p", &candidates()).unwrap().is_empty());
    }

    #[test]
    fn remote_filter_round_trip_against_stub_server() {
        use std::net::TcpListener;
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let (mut sock, _) = listener.accept().unwrap();
            let mut buf = vec![0u8; 65536];
            let mut read = 0usize;
            loop {
                let n = sock.read(&mut buf[read..]).unwrap();
                read += n;
                let text = String::from_utf8_lossy(&buf[..read]);
                if let Some((head, body)) = text.split_once("\r\n\r\n") {
                    let want: usize = head
                        .lines()
                        .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:")
                            .map(|v| v.trim().parse().unwrap()))
                        .unwrap();
                    if body.len() >= want {
                        break;
                    }
                }
                if n == 0 {
                    break;
                }
            }
            let request = String::from_utf8_lossy(&buf[..read]).to_string();
            let reply = r#"{"keep": [2, 0, 99]}"#;
            let response = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{}",
                reply.len(),
                reply
            );
            sock.write_all(response.as_bytes()).unwrap();
            request
        });

        let mut f = RemoteFilter::new(format!("http://{addr}"), Duration::from_secs(5));
        let keep = f.filter("push the light boxes", &candidates()).unwrap();
        assert_eq!(keep, vec![0, 2]);

        let request = handle.join().unwrap();
        assert!(request.contains("\"prompt\":\"push the light boxes\""));
        assert!(request.contains("\"caption\":\"wall\""));
    }

    #[test]
    fn remote_filter_timeout_is_unavailable() {
        let mut f = RemoteFilter::new("http://127.0.0.1:9", Duration::from_millis(200));
        assert!(matches!(
            f.filter("p", &candidates()),
            Err(FilterError::Unavailable(_))
        ));
    }
}
