//! Pluggable scorers: image embeddings and optical flow.
//!
//! Neural models run out of process and drop their results into directories
//! of `EMB1` / `FLO1` files; the built-in fallbacks keep everything runnable
//! offline.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use thiserror::Error;

use crate::curation::{optical_flow_scaled, FlowConfig, FlowField};
use crate::formats::{self, FormatError};
use crate::image::ImageTensor;
use crate::quality::to_grayscale;

/// Side of the thumbnail the fallback embedding is computed on.
pub const FALLBACK_THUMB: usize = 16;
/// Low-frequency DCT block kept by the fallback embedding.
pub const FALLBACK_BLOCK: usize = 8;
pub const FALLBACK_DIM: usize = FALLBACK_BLOCK * FALLBACK_BLOCK;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider needs a lookup key for this item")]
    NoKey,
    #[error("no precomputed entry {0}")]
    Missing(PathBuf),
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("provider failed: {0}")]
    Failed(String),
}

/// Maps an image to a feature vector.
pub trait EmbeddingProvider: Send + Sync {
    /// Stable identity string, written into reports.
    fn id(&self) -> String;

    /// `key` is the content digest of the image (or a derived key for crops);
    /// in-process providers may ignore it.
    fn embed(&self, img: &ImageTensor, key: Option<&str>) -> Result<Vec<f64>, ProviderError>;

    /// Providers that cannot take concurrent calls return true; callers then
    /// serialize access through [`SingleFlight`].
    fn single_flight(&self) -> bool {
        false
    }
}

/// Estimates dense motion between two images.
pub trait FlowProvider: Send + Sync {
    fn id(&self) -> String;

    fn flow(
        &self,
        a: &ImageTensor,
        b: &ImageTensor,
        key_a: Option<&str>,
        key_b: Option<&str>,
    ) -> Result<FlowField, ProviderError>;

    fn single_flight(&self) -> bool {
        false
    }
}

/// Orthonormal DCT-II basis, `basis[k * n + i] = α_k cos(π (2i + 1) k / 2n)`.
fn dct_basis(n: usize) -> Vec<f64> {
    let mut b = vec![0.0; n * n];
    for k in 0..n {
        let alpha = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for i in 0..n {
            b[k * n + i] = alpha * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
        }
    }
    b
}

/// 2D orthonormal DCT-II of a row-major `n × n` block.
pub fn dct2(block: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(block.len(), n * n);
    let basis = dct_basis(n);
    // rows: tmp[y][k] = Σ_x block[y][x] basis[k][x]
    let mut tmp = vec![0.0; n * n];
    for y in 0..n {
        for k in 0..n {
            tmp[y * n + k] = (0..n).map(|x| block[y * n + x] * basis[k * n + x]).sum();
        }
    }
    let mut out = vec![0.0; n * n];
    for k in 0..n {
        for l in 0..n {
            out[k * n + l] = (0..n).map(|y| basis[k * n + y] * tmp[y * n + l]).sum();
        }
    }
    out
}

/// Built-in structural embedding: 16×16 area-downsampled luminance, mean
/// removed, then the 8×8 lowest-frequency orthonormal DCT coefficients,
/// flattened row-major (64 values).
///
/// Flat images map to the zero vector.
pub fn fallback_embedding(img: &ImageTensor) -> Vec<f64> {
    let gray = to_grayscale(img).expect("ImageTensor has 1 or 3 channels");
    let thumb = gray.resize_area(FALLBACK_THUMB, FALLBACK_THUMB);
    let mean = thumb.data().iter().sum::<f64>() / thumb.data().len() as f64;
    let centered: Vec<f64> = thumb.data().iter().map(|v| v - mean).collect();
    let coeffs = dct2(&centered, FALLBACK_THUMB);
    let mut out = Vec::with_capacity(FALLBACK_DIM);
    for k in 0..FALLBACK_BLOCK {
        out.extend_from_slice(&coeffs[k * FALLBACK_THUMB..k * FALLBACK_THUMB + FALLBACK_BLOCK]);
    }
    out
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FallbackEmbedder;

impl EmbeddingProvider for FallbackEmbedder {
    fn id(&self) -> String {
        format!("builtin-dct{FALLBACK_BLOCK}x{FALLBACK_BLOCK}")
    }

    fn embed(&self, img: &ImageTensor, _key: Option<&str>) -> Result<Vec<f64>, ProviderError> {
        Ok(fallback_embedding(img))
    }
}

/// Precomputed `<key>.emb` files.
#[derive(Debug, Clone)]
pub struct Emb1Directory {
    dir: PathBuf,
}

impl Emb1Directory {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.emb"))
    }

    pub fn lookup(&self, key: &str) -> Result<Vec<f64>, ProviderError> {
        let path = self.path_for(key);
        if !path.is_file() {
            return Err(ProviderError::Missing(path));
        }
        formats::read_embedding(&path)
            .map(|v| v.into_iter().map(f64::from).collect())
            .map_err(|source| ProviderError::Format { path, source })
    }
}

impl EmbeddingProvider for Emb1Directory {
    fn id(&self) -> String {
        format!("emb1:{}", self.dir.display())
    }

    fn embed(&self, _img: &ImageTensor, key: Option<&str>) -> Result<Vec<f64>, ProviderError> {
        self.lookup(key.ok_or(ProviderError::NoKey)?)
    }
}

/// Built-in pyramidal Lucas–Kanade.
#[derive(Debug, Clone, Default)]
pub struct LucasKanadeFlow {
    pub config: FlowConfig,
}

impl FlowProvider for LucasKanadeFlow {
    fn id(&self) -> String {
        format!(
            "builtin-lk(levels={},window={})",
            self.config.pyramid_levels, self.config.window
        )
    }

    fn flow(
        &self,
        a: &ImageTensor,
        b: &ImageTensor,
        _ka: Option<&str>,
        _kb: Option<&str>,
    ) -> Result<FlowField, ProviderError> {
        optical_flow_scaled(a, b, &self.config).map_err(|e| ProviderError::Failed(e.to_string()))
    }
}

/// Precomputed `<key_a>_<key_b>.flo` files.
#[derive(Debug, Clone)]
pub struct Flo1Directory {
    dir: PathBuf,
}

impl Flo1Directory {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, key_a: &str, key_b: &str) -> PathBuf {
        self.dir.join(format!("{key_a}_{key_b}.flo"))
    }
}

impl FlowProvider for Flo1Directory {
    fn id(&self) -> String {
        format!("flo1:{}", self.dir.display())
    }

    fn flow(
        &self,
        _a: &ImageTensor,
        _b: &ImageTensor,
        key_a: Option<&str>,
        key_b: Option<&str>,
    ) -> Result<FlowField, ProviderError> {
        let path = self.path_for(key_a.ok_or(ProviderError::NoKey)?, key_b.ok_or(ProviderError::NoKey)?);
        if !path.is_file() {
            return Err(ProviderError::Missing(path));
        }
        formats::read_flow(&path).map_err(|source| ProviderError::Format { path, source })
    }
}

/// Serializes calls into a provider that declared itself single-flight and
/// passes straight through otherwise.
pub struct SingleFlight<'a, P: ?Sized> {
    inner: &'a P,
    gate: Option<Mutex<()>>,
}

impl<'a> SingleFlight<'a, dyn EmbeddingProvider + 'a> {
    pub fn embedding(inner: &'a (dyn EmbeddingProvider + 'a)) -> Self {
        let gate = inner.single_flight().then(|| Mutex::new(()));
        Self { inner, gate }
    }

    pub fn embed(&self, img: &ImageTensor, key: Option<&str>) -> Result<Vec<f64>, ProviderError> {
        let _g = self.gate.as_ref().map(|m| m.lock().unwrap_or_else(|e| e.into_inner()));
        self.inner.embed(img, key)
    }

    pub fn id(&self) -> String {
        self.inner.id()
    }
}

impl<'a> SingleFlight<'a, dyn FlowProvider + 'a> {
    pub fn flow_provider(inner: &'a (dyn FlowProvider + 'a)) -> Self {
        let gate = inner.single_flight().then(|| Mutex::new(()));
        Self { inner, gate }
    }

    pub fn flow(
        &self,
        a: &ImageTensor,
        b: &ImageTensor,
        ka: Option<&str>,
        kb: Option<&str>,
    ) -> Result<FlowField, ProviderError> {
        let _g = self.gate.as_ref().map(|m| m.lock().unwrap_or_else(|e| e.into_inner()));
        self.inner.flow(a, b, ka, kb)
    }

    pub fn id(&self) -> String {
        self.inner.id()
    }
}

/// Resolve an embedding provider from a CLI/config string: `builtin` or a
/// directory of `EMB1` files.
pub fn embedding_provider_from_spec(spec: &str) -> Box<dyn EmbeddingProvider> {
    if spec == "builtin" {
        Box::new(FallbackEmbedder)
    } else {
        Box::new(Emb1Directory::new(Path::new(spec)))
    }
}

/// Resolve a flow provider: `builtin` (pyramidal Lucas–Kanade with the given
/// settings) or a directory of `FLO1` files.
pub fn flow_provider_from_spec(spec: &str, config: FlowConfig) -> Box<dyn FlowProvider> {
    if spec == "builtin" {
        Box::new(LucasKanadeFlow { config })
    } else {
        Box::new(Flo1Directory::new(Path::new(spec)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct double-sum DCT, no separability.
    fn dct2_oracle(block: &[f64], n: usize) -> Vec<f64> {
        let pi = std::f64::consts::PI;
        let a = |k: usize| if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        let mut out = vec![0.0; n * n];
        for k in 0..n {
            for l in 0..n {
                let mut s = 0.0;
                for y in 0..n {
                    for x in 0..n {
                        s += block[y * n + x]
                            * ((2 * y + 1) as f64 * k as f64 * pi / (2 * n) as f64).cos()
                            * ((2 * x + 1) as f64 * l as f64 * pi / (2 * n) as f64).cos();
                    }
                }
                out[k * n + l] = a(k) * a(l) * s;
            }
        }
        out
    }

    #[test]
    fn dct_matches_oracle_and_preserves_energy() {
        let block: Vec<f64> = (0..64).map(|i| ((i * 37) % 11) as f64 / 11.0).collect();
        let fast = dct2(&block, 8);
        let slow = dct2_oracle(&block, 8);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
        let e0: f64 = block.iter().map(|v| v * v).sum();
        let e1: f64 = fast.iter().map(|v| v * v).sum();
        assert!((e0 - e1).abs() < 1e-12);
    }

    #[test]
    fn fallback_shape_and_flat_input() {
        let flat = ImageTensor::from_unit(20, 30, 3, vec![0.3; 20 * 30 * 3]).unwrap();
        let e = fallback_embedding(&flat);
        assert_eq!(e.len(), FALLBACK_DIM);
        assert!(e.iter().all(|v| v.abs() < 1e-12));
        let ramp = ImageTensor::from_fn(32, 32, 1, |_, x, _| x as f64 / 31.0).unwrap();
        let e = fallback_embedding(&ramp);
        assert!(e[0].abs() < 1e-12, "DC removed");
        assert!(e[1].abs() > 0.1, "horizontal ramp lives in the first AC column");
    }

    #[test]
    fn emb_directory_lookup() {
        let dir = tempfile::tempdir().unwrap();
        formats::write_embedding(&dir.path().join("abc.emb"), &[1.0, 2.0]).unwrap();
        let p = Emb1Directory::new(dir.path());
        let img = ImageTensor::from_unit(1, 1, 1, vec![0.0]).unwrap();
        assert_eq!(p.embed(&img, Some("abc")).unwrap(), vec![1.0, 2.0]);
        assert!(matches!(p.embed(&img, Some("zzz")), Err(ProviderError::Missing(_))));
        assert!(matches!(p.embed(&img, None), Err(ProviderError::NoKey)));
    }

    struct Serial;
    impl EmbeddingProvider for Serial {
        fn id(&self) -> String {
            "serial".into()
        }
        fn embed(&self, _: &ImageTensor, _: Option<&str>) -> Result<Vec<f64>, ProviderError> {
            Ok(vec![1.0])
        }
        fn single_flight(&self) -> bool {
            true
        }
    }

    #[test]
    fn single_flight_gate() {
        let s = Serial;
        let g = SingleFlight::embedding(&s);
        assert!(g.gate.is_some());
        let img = ImageTensor::from_unit(1, 1, 1, vec![0.0]).unwrap();
        assert_eq!(g.embed(&img, None).unwrap(), vec![1.0]);
        let f = FallbackEmbedder;
        assert!(SingleFlight::embedding(&f).gate.is_none());
    }
}
