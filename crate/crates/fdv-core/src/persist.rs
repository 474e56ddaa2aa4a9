//! Versioned binary container for trained writer models.
//!
//! Layout: the magic bytes `FDV1`, a little-endian `u32` byte length of the
//! UTF-8 JSON header, the header itself, then the raw tensor payload — each
//! tensor's row-major values as little-endian 64-bit floats, in exactly the
//! order declared by the header's tensor manifest. The manifest lists the
//! feature model's parameter matrices in their canonical order (encoder
//! stack, mu head, logvar head, decoder stack, output layer; weights before
//! biases) followed by the classifier section: support vectors, dual
//! coefficients, bias, and kernel width. Saving and reloading is bit-exact.

use crate::error::{Error, Result};
use crate::numeric::DenseMatrix;
use crate::preprocess::PreprocessConfig;
use crate::scalar::Real;
use crate::svm::{SvmConfig, SvmModel};
use crate::trainer::TrainConfig;
use crate::vae::{VaeConfig, VaeModel};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 4] = b"FDV1";
const FORMAT_VERSION: u32 = 1;

/// Everything needed to verify signatures for one writer: the full
/// preprocessing and training provenance plus the trained feature model and
/// classifier.
#[derive(Clone, Debug)]
pub struct WriterModel<F> {
    pub writer_id: String,
    /// Run seed; feature extraction at verification time re-derives its
    /// noise stream from this and the image content.
    pub seed: u64,
    pub preprocess: PreprocessConfig,
    pub train: TrainConfig,
    pub svm_cfg: SvmConfig,
    pub vae: VaeModel<F>,
    pub svm: SvmModel<F>,
    pub svm_passes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct ContainerHeader {
    format_version: u32,
    writer_id: String,
    seed: u64,
    preprocess: PreprocessConfig,
    vae: VaeConfig,
    train: TrainConfig,
    svm: SvmConfig,
    svm_converged: bool,
    svm_passes: usize,
    tensors: Vec<TensorEntry>,
}

/// Canonical tensor names for a model configuration, in payload order.
fn vae_tensor_names(cfg: &VaeConfig) -> Vec<String> {
    let mut names = Vec::new();
    for i in 0..cfg.hidden_dims.len() {
        names.push(format!("enc{i}_w"));
        names.push(format!("enc{i}_b"));
    }
    names.push("mu_w".into());
    names.push("mu_b".into());
    names.push("logvar_w".into());
    names.push("logvar_b".into());
    for i in 0..cfg.hidden_dims.len() {
        names.push(format!("dec{i}_w"));
        names.push(format!("dec{i}_b"));
    }
    names.push("out_w".into());
    names.push("out_b".into());
    names
}

fn expected_manifest<F: Real>(model: &WriterModel<F>) -> Vec<TensorEntry> {
    let mut entries: Vec<TensorEntry> = vae_tensor_names(&model.vae.cfg)
        .into_iter()
        .zip(model.vae.param_views())
        .map(|(name, m)| TensorEntry { name, rows: m.rows(), cols: m.cols() })
        .collect();
    let n_sv = model.svm.dual_coeffs().len();
    entries.push(TensorEntry {
        name: "svm_support_vectors".into(),
        rows: n_sv,
        cols: model.svm.support_vectors().cols(),
    });
    entries.push(TensorEntry { name: "svm_dual_coeffs".into(), rows: 1, cols: n_sv });
    entries.push(TensorEntry { name: "svm_bias".into(), rows: 1, cols: 1 });
    entries.push(TensorEntry { name: "svm_gamma".into(), rows: 1, cols: 1 });
    entries
}

fn push_values<F: Real>(buf: &mut Vec<u8>, values: impl IntoIterator<Item = F>) {
    for v in values {
        buf.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
    }
}

/// Serialize a writer model into container bytes.
pub fn model_to_bytes<F: Real>(model: &WriterModel<F>) -> Result<Vec<u8>> {
    if !model.vae.all_finite() {
        return Err(Error::Numeric("refusing to persist non-finite parameters".into()));
    }
    let header = ContainerHeader {
        format_version: FORMAT_VERSION,
        writer_id: model.writer_id.clone(),
        seed: model.seed,
        preprocess: model.preprocess,
        vae: model.vae.cfg.clone(),
        train: model.train.clone(),
        svm: model.svm_cfg.clone(),
        svm_converged: model.svm.converged(),
        svm_passes: model.svm_passes,
        tensors: expected_manifest(model),
    };
    let header_json = serde_json::to_string(&header)
        .map_err(|e| Error::Data(format!("container header: {e}")))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(header_json.as_bytes());
    for view in model.vae.param_views() {
        push_values(&mut buf, view.data().iter().copied());
    }
    push_values(&mut buf, model.svm.support_vectors().data().iter().copied());
    push_values(&mut buf, model.svm.dual_coeffs().iter().copied());
    push_values(&mut buf, [model.svm.bias(), model.svm.gamma()]);
    Ok(buf)
}

/// Write the container atomically (temp file in the same directory, then
/// rename).
pub fn save_model<F: Real>(model: &WriterModel<F>, path: &Path) -> Result<()> {
    let bytes = model_to_bytes(model)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("bad model path {}", path.display())))?;
    let tmp = path.with_file_name(format!("{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, &bytes).map_err(|e| Error::io(tmp.clone(), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path.to_path_buf(), e))?;
    Ok(())
}

fn data_err(path_msg: &str) -> Error {
    Error::Data(format!("invalid model container: {path_msg}"))
}

/// Parse container bytes back into a writer model, verifying the magic,
/// version, tensor manifest, and exact payload length.
pub fn model_from_bytes<F: Real>(bytes: &[u8]) -> Result<WriterModel<F>> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(data_err("missing FDV1 magic"));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let payload_start = 8 + header_len;
    if bytes.len() < payload_start {
        return Err(data_err("header extends past end of file"));
    }
    let header: ContainerHeader = serde_json::from_slice(&bytes[8..payload_start])
        .map_err(|e| data_err(&format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(data_err(&format!(
            "unsupported format version {}",
            header.format_version
        )));
    }

    let mut vae = VaeModel::<F>::zeros(header.vae.clone())?;
    let expected_vae: Vec<TensorEntry> = vae_tensor_names(&header.vae)
        .into_iter()
        .zip(vae.param_views())
        .map(|(name, m)| TensorEntry { name, rows: m.rows(), cols: m.cols() })
        .collect();
    let n_vae = expected_vae.len();
    if header.tensors.len() != n_vae + 4 {
        return Err(data_err("tensor manifest length mismatch"));
    }
    if header.tensors[..n_vae] != expected_vae[..] {
        return Err(data_err("tensor manifest disagrees with model configuration"));
    }
    let sv_entry = &header.tensors[n_vae];
    let co_entry = &header.tensors[n_vae + 1];
    let expected_tail = [
        TensorEntry {
            name: "svm_support_vectors".into(),
            rows: sv_entry.rows,
            cols: header.vae.latent_dim,
        },
        TensorEntry { name: "svm_dual_coeffs".into(), rows: 1, cols: sv_entry.rows },
        TensorEntry { name: "svm_bias".into(), rows: 1, cols: 1 },
        TensorEntry { name: "svm_gamma".into(), rows: 1, cols: 1 },
    ];
    if header.tensors[n_vae..] != expected_tail[..] {
        return Err(data_err("classifier manifest disagrees with model configuration"));
    }

    let total: usize = header.tensors.iter().map(|t| t.rows * t.cols).sum();
    if bytes.len() != payload_start + 8 * total {
        return Err(data_err(&format!(
            "payload length {} does not match manifest ({} values)",
            bytes.len() - payload_start,
            total
        )));
    }
    let mut values = bytes[payload_start..]
        .chunks_exact(8)
        .map(|c| F::cast(f64::from_le_bytes(c.try_into().expect("8 bytes"))));

    let n_vae_values: usize = expected_vae.iter().map(|t| t.rows * t.cols).sum();
    let flat: Vec<F> = values.by_ref().take(n_vae_values).collect();
    vae.load_flat_params(&flat)?;
    if !vae.all_finite() {
        return Err(data_err("non-finite feature-model parameter"));
    }

    let n_sv = sv_entry.rows;
    let sv_values: Vec<F> = values.by_ref().take(n_sv * header.vae.latent_dim).collect();
    let support_vectors = DenseMatrix::from_vec(n_sv, header.vae.latent_dim, sv_values)?;
    let dual_coeffs: Vec<F> = values.by_ref().take(co_entry.cols).collect();
    let bias = values.next().expect("length checked");
    let gamma = values.next().expect("length checked");
    if support_vectors.data().iter().any(|v| !v.is_finite())
        || dual_coeffs.iter().any(|v| !v.is_finite())
        || !bias.is_finite()
    {
        return Err(data_err("non-finite classifier parameter"));
    }
    let svm = SvmModel::from_parts(support_vectors, dual_coeffs, bias, gamma, header.svm_converged)?;

    // The train section's seed is skipped during serialization; the
    // container's top-level seed is authoritative.
    let mut train = header.train;
    train.seed = header.seed;
    Ok(WriterModel {
        writer_id: header.writer_id,
        seed: header.seed,
        preprocess: header.preprocess,
        train,
        svm_cfg: header.svm,
        vae,
        svm,
        svm_passes: header.svm_passes,
    })
}

/// Load a container file.
pub fn load_model<F: Real>(path: &Path) -> Result<WriterModel<F>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
    model_from_bytes(&bytes)
}
