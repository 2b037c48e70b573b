//! Sentence embedding providers and the binary embedding file.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::serialize::Fingerprint;

pub const DEFAULT_DIM: usize = 384;
pub const ENDPOINT_ENV: &str = "TABFP_EMBED_ENDPOINT";
const MAGIC: &[u8; 6] = b"TBEMB1";
const FALLBACK_TAG: &str = "fallback-hash-v1";
const RETRIES: u32 = 3;

/// `d_e x m` matrix whose column `k` embeds sentence `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub dataset_id: String,
    pub provider_tag: String,
    pub columns: DMatrix<f64>,
}

impl EmbeddingMatrix {
    pub fn d_e(&self) -> usize {
        self.columns.nrows()
    }

    pub fn m(&self) -> usize {
        self.columns.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provider {
    /// POST `{url}/embed`; `None` reads the URL from `TABFP_EMBED_ENDPOINT`.
    HttpService { url: Option<String> },
    FallbackHash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub provider: Provider,
    pub d_e: usize,
    pub seed: u64,
    pub timeout_secs: u64,
    pub batch_size: usize,
    /// Concurrent requests in service mode.
    pub max_in_flight: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            provider: Provider::FallbackHash,
            d_e: DEFAULT_DIM,
            seed: 42,
            timeout_secs: 30,
            batch_size: 64,
            max_in_flight: 4,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_in_flight == 0 {
            return Err(Error::Config("batch size and in-flight limit must be positive".into()));
        }
        if self.provider == Provider::FallbackHash && self.d_e < 8 {
            return Err(Error::Config(format!("embedding dimension {} is below 8", self.d_e)));
        }
        Ok(())
    }

    fn endpoint(&self) -> Result<String> {
        let url = match &self.provider {
            Provider::HttpService { url: Some(u) } => u.clone(),
            Provider::HttpService { url: None } => std::env::var(ENDPOINT_ENV)
                .map_err(|_| Error::Config(format!("no embedding endpoint given and {ENDPOINT_ENV} unset")))?,
            Provider::FallbackHash => unreachable!("fallback has no endpoint"),
        };
        Ok(format!("{}/embed", url.trim_end_matches('/')))
    }

    /// Identity recorded with every matrix; catalogs refuse to mix tags.
    pub fn provider_tag(&self) -> Result<String> {
        Ok(match self.provider {
            Provider::FallbackHash => format!("{FALLBACK_TAG}/d{}/s{}", self.d_e, self.seed),
            Provider::HttpService { .. } => format!("http:{}/d{}", self.endpoint()?, self.d_e),
        })
    }
}

/// Lowercased word unigrams and `#`-padded character trigrams per word.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    for word in lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
        out.push(format!("w:{word}"));
        let padded: Vec<char> = format!("#{word}#").chars().collect();
        for tri in padded.windows(3) {
            out.push(format!("t:{}", tri.iter().collect::<String>()));
        }
    }
    out
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(bytes) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // final avalanche so low bits and the sign bit are well mixed
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^ (h >> 33)
}

/// Signed feature hashing of tokens, unit l2 norm; an empty token list maps
/// to the first basis vector.
pub fn encode_tokens<S: AsRef<str>>(tokens: &[S], d_e: usize, seed: u64) -> Vec<f64> {
    let mut v = vec![0.0; d_e];
    for t in tokens {
        let h = fnv1a(seed, t.as_ref().as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[(h % d_e as u64) as usize] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        let mut e0 = vec![0.0; d_e];
        e0[0] = 1.0;
        return e0;
    }
    v.iter().map(|x| x / norm).collect()
}

/// Deterministic offline encoder.
pub fn fallback_encode(text: &str, d_e: usize, seed: u64) -> Result<Vec<f64>> {
    if d_e < 8 {
        return Err(Error::Config(format!("embedding dimension {d_e} is below 8")));
    }
    Ok(encode_tokens(&tokenize(text), d_e, seed))
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

fn post_batch(client: &reqwest::blocking::Client, url: &str, texts: &[&str], d_e: usize) -> Result<Vec<Vec<f64>>> {
    let mut last = String::new();
    for attempt in 0..=RETRIES {
        if attempt > 0 {
            std::thread::sleep(Duration::from_millis(100 << attempt));
        }
        let resp = client
            .post(url)
            .json(&EmbedRequest { texts })
            .send()
            .and_then(|r| r.error_for_status());
        match resp.and_then(|r| r.json::<EmbedResponse>()) {
            Ok(body) => {
                if body.embeddings.len() != texts.len() {
                    return Err(Error::format(
                        "embedding response",
                        format!("{} vectors for {} texts", body.embeddings.len(), texts.len()),
                    ));
                }
                for e in &body.embeddings {
                    if e.len() != d_e {
                        return Err(Error::DimMismatch { expected: d_e, got: e.len() });
                    }
                    if e.iter().any(|x| !x.is_finite()) {
                        return Err(Error::NonFinite);
                    }
                }
                return Ok(body.embeddings);
            }
            Err(e) => {
                log::warn!("embedding request failed (attempt {}): {e}", attempt + 1);
                last = e.to_string();
            }
        }
    }
    Err(Error::ServiceUnavailable(last))
}

fn encode_http(texts: &[&str], cfg: &ProviderConfig) -> Result<Vec<Vec<f64>>> {
    let url = cfg.endpoint()?;
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(cfg.timeout_secs))
        .build()
        .map_err(|e| Error::ServiceUnavailable(e.to_string()))?;
    let batches: Vec<&[&str]> = texts.chunks(cfg.batch_size).collect();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(texts.len());
    // each wave runs at most `max_in_flight` requests; results are placed by
    // batch index
    for wave in batches.chunks(cfg.max_in_flight) {
        let results: Vec<Result<Vec<Vec<f64>>>> = std::thread::scope(|s| {
            let handles: Vec<_> = wave
                .iter()
                .map(|batch| {
                    let client = &client;
                    let url = &url;
                    s.spawn(move || post_batch(client, url, batch, cfg.d_e))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("request thread panicked")).collect()
        });
        for r in results {
            out.extend(r?);
        }
    }
    Ok(out)
}

/// Embeds arbitrary texts with the configured provider.
pub fn encode_texts(dataset_id: &str, texts: &[&str], cfg: &ProviderConfig) -> Result<EmbeddingMatrix> {
    cfg.validate()?;
    if texts.is_empty() {
        return Err(Error::EmptyVector);
    }
    let vectors = match cfg.provider {
        Provider::FallbackHash => texts
            .iter()
            .map(|t| fallback_encode(t, cfg.d_e, cfg.seed))
            .collect::<Result<Vec<_>>>()?,
        Provider::HttpService { .. } => encode_http(texts, cfg)?,
    };
    let columns = DMatrix::from_fn(cfg.d_e, vectors.len(), |i, k| vectors[k][i]);
    let mut e = EmbeddingMatrix {
        dataset_id: dataset_id.to_string(),
        provider_tag: cfg.provider_tag()?,
        columns,
    };
    quantize(&mut e);
    Ok(e)
}

/// One column per sentence, in sentence order.
pub fn encode(fp: &Fingerprint, cfg: &ProviderConfig) -> Result<EmbeddingMatrix> {
    encode_texts(&fp.dataset_id, &fp.texts(), cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub dataset_id: String,
    pub provider_tag: String,
    pub d_e: usize,
    pub m: usize,
    pub format: String,
}

/// `x.emb.bin` pairs with `x.emb.json`.
pub fn sidecar_path(bin: &Path) -> PathBuf {
    match bin.to_str().and_then(|s| s.strip_suffix(".bin")) {
        Some(stem) => PathBuf::from(format!("{stem}.json")),
        None => PathBuf::from(format!("{}.json", bin.display())),
    }
}

pub fn write_embedding_bin<W: Write>(e: &EmbeddingMatrix, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(e.d_e() as u32).to_le_bytes())?;
    w.write_all(&(e.m() as u32).to_le_bytes())?;
    // nalgebra storage is column-major already
    for v in e.columns.iter() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the matrix body; ids come from the sidecar.
pub fn read_embedding_bin<R: Read>(mut r: R) -> Result<DMatrix<f64>> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format("embedding file", "bad magic"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let d_e = u32::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let m = u32::from_le_bytes(word) as usize;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != d_e * m * 4 {
        return Err(Error::format(
            "embedding file",
            format!("expected {} bytes of data for {d_e}x{m}, found {}", d_e * m * 4, body.len()),
        ));
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(DMatrix::from_vec(d_e, m, values))
}

pub fn save_embedding(e: &EmbeddingMatrix, bin: &Path) -> Result<()> {
    write_embedding_bin(e, std::io::BufWriter::new(std::fs::File::create(bin)?))?;
    let sidecar = Sidecar {
        dataset_id: e.dataset_id.clone(),
        provider_tag: e.provider_tag.clone(),
        d_e: e.d_e(),
        m: e.m(),
        format: "TBEMB1".into(),
    };
    std::fs::write(sidecar_path(bin), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

pub fn load_embedding(bin: &Path) -> Result<EmbeddingMatrix> {
    let columns = read_embedding_bin(std::io::BufReader::new(std::fs::File::open(bin)?))?;
    let sidecar: Sidecar = serde_json::from_slice(&std::fs::read(sidecar_path(bin))?)?;
    if sidecar.d_e != columns.nrows() || sidecar.m != columns.ncols() {
        return Err(Error::format("embedding sidecar", "shape disagrees with the binary file"));
    }
    Ok(EmbeddingMatrix {
        dataset_id: sidecar.dataset_id,
        provider_tag: sidecar.provider_tag,
        columns,
    })
}

/// Rounds every entry through `f32`, the precision of the file format, so
/// in-memory and reloaded matrices agree exactly.
pub fn quantize(e: &mut EmbeddingMatrix) {
    e.columns.apply(|v| *v = *v as f32 as f64);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn unit_norm_and_deterministic() {
        let a = fallback_encode("Variable: x. Measure: mean. Response: The mean is 2.0000.", 384, 42).unwrap();
        let b = fallback_encode("Variable: x. Measure: mean. Response: The mean is 2.0000.", 384, 42).unwrap();
        assert_eq!(a, b);
        assert!((cosine(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn related_sentences_partially_similar() {
        let a = fallback_encode("Variable: a. Measure: mean. Response: The mean is 1.0000.", 384, 42).unwrap();
        let b = fallback_encode("Variable: a. Measure: median. Response: The median is 3.0000.", 384, 42).unwrap();
        let c = cosine(&a, &b);
        assert!(c > 0.0 && c < 1.0, "{c}");
    }

    #[test]
    fn empty_text_is_first_basis_vector() {
        let e = fallback_encode("  ...  ", 16, 1).unwrap();
        assert_eq!(e[0], 1.0);
        assert!(e[1..].iter().all(|&v| v == 0.0));
        assert!(fallback_encode("x", 4, 1).is_err());
    }

    #[test]
    fn tokens() {
        assert_eq!(tokenize("Ab, c"), vec!["w:ab", "t:#ab", "t:ab#", "w:c", "t:#c#"]);
    }

    #[test]
    fn shape_follows_sentence_count() {
        let texts = ["a", "b", "c", "d", "e", "f", "g"];
        let e = encode_texts("d", &texts, &ProviderConfig::default()).unwrap();
        assert_eq!((e.d_e(), e.m()), (384, 7));
    }

    #[test]
    fn binary_round_trip() {
        let texts = ["one", "two", "three"];
        let e = encode_texts("ds", &texts, &ProviderConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("ds.emb.bin");
        save_embedding(&e, &bin).unwrap();
        assert!(dir.path().join("ds.emb.json").exists());
        let bytes = std::fs::read(&bin).unwrap();
        assert_eq!(&bytes[..6], b"TBEMB1");
        assert_eq!(bytes.len(), 6 + 8 + 384 * 3 * 4);
        assert_eq!(load_embedding(&bin).unwrap(), e);
    }
}
