//! Checkpoint file format.
//!
//! ```text
//! DSECKPT1\n
//! key=value\n            (one line per config field, fixed order)
//! ...
//! \n                     (blank line ends the header)
//! <f32 LE arrays>        E, W1, b1, W2, b2, then m in the same order, then v
//! <u64 LE>               number of bytes preceding this footer
//! ```
//!
//! Floats in the header use Rust's shortest round-trip formatting, so a
//! load/save cycle reproduces the file byte for byte.

use std::fs;
use std::path::Path;

use super::{AdamState, TrainConfig};
use crate::corpus::fnv1a64;
use crate::encoder::{EncoderConfig, EncoderModel, ParamSet};
use crate::error::{DseError, Result};
use crate::loss::LossConfig;

pub const CHECKPOINT_MAGIC: &str = "DSECKPT1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: EncoderModel<f32>,
    pub adam: AdamState<f32>,
    /// Number of completed epochs.
    pub epoch: usize,
    pub train_config: TrainConfig,
    pub loss_config: LossConfig,
}

fn err(message: impl Into<String>) -> DseError {
    DseError::Checkpoint {
        version: CHECKPOINT_MAGIC,
        message: message.into(),
    }
}

fn train_config_lines(tc: &TrainConfig) -> Vec<(&'static str, String)> {
    vec![
        ("batch_size", tc.batch_size.to_string()),
        ("epochs", tc.epochs.to_string()),
        ("lr_head", format!("{:?}", tc.lr_head)),
        ("lr_backbone", format!("{:?}", tc.lr_backbone)),
        ("beta1", format!("{:?}", tc.beta1)),
        ("beta2", format!("{:?}", tc.beta2)),
        ("adam_eps", format!("{:?}", tc.adam_eps)),
        ("shuffle_seed", tc.shuffle_seed.to_string()),
        ("init_seed", tc.init_seed.to_string()),
        ("dropout_seed", tc.dropout_seed.to_string()),
        ("same_dialogue_exclusion", tc.same_dialogue_exclusion.to_string()),
        ("keep_partial_batches", tc.keep_partial_batches.to_string()),
    ]
}

/// Stable digest of a training configuration.
pub fn train_config_digest(tc: &TrainConfig) -> String {
    let canonical: String = train_config_lines(tc)
        .iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect();
    format!("{:016x}", fnv1a64(canonical.as_bytes(), 0))
}

fn header_lines(ck: &Checkpoint) -> Vec<(&'static str, String)> {
    let ec = &ck.model.config;
    let lc = &ck.loss_config;
    let mut lines = vec![
        ("format_version", FORMAT_VERSION.to_string()),
        ("vocab_size", ec.vocab_size.to_string()),
        ("embed_dim", ec.embed_dim.to_string()),
        ("head_hidden", ec.head_hidden.to_string()),
        ("head_out", ec.head_out.to_string()),
        ("dropout_rate", format!("{:?}", ec.dropout_rate)),
        ("hash_seed", ec.hash_seed.to_string()),
        ("temperature", format!("{:?}", lc.temperature)),
        ("hard_negatives", lc.hard_negatives.to_string()),
        ("eps_norm", format!("{:?}", lc.eps_norm)),
        ("positive_in_denominator", lc.positive_in_denominator.to_string()),
    ];
    lines.extend(train_config_lines(&ck.train_config));
    lines.push(("epoch", ck.epoch.to_string()));
    lines.push(("adam_step", ck.adam.t.to_string()));
    lines.push(("train_config_digest", train_config_digest(&ck.train_config)));
    lines
}

pub fn checkpoint_to_bytes(ck: &Checkpoint) -> Result<Vec<u8>> {
    let params = &ck.model.params;
    if !ck.adam.m.same_shape(params) || !ck.adam.v.same_shape(params) {
        return Err(err("optimizer state does not match the model"));
    }
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC.as_bytes());
    out.push(b'\n');
    for (k, v) in header_lines(ck) {
        out.extend_from_slice(format!("{k}={v}\n").as_bytes());
    }
    out.push(b'\n');
    for set in [params, &ck.adam.m, &ck.adam.v] {
        for (_, group) in set.groups() {
            for x in group {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    let len = out.len() as u64;
    out.extend_from_slice(&len.to_le_bytes());
    Ok(out)
}

struct Header<'a> {
    fields: Vec<(&'a str, &'a str)>,
}

impl<'a> Header<'a> {
    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .fields
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| err(format!("missing header field `{key}`")))?;
        raw.parse()
            .map_err(|_| err(format!("invalid value {raw:?} for header field `{key}`")))
    }
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let magic_line = format!("{CHECKPOINT_MAGIC}\n");
    if !bytes.starts_with(magic_line.as_bytes()) {
        let shown = String::from_utf8_lossy(&bytes[..bytes.len().min(8)]).into_owned();
        return Err(err(format!("bad magic {shown:?}, expected {CHECKPOINT_MAGIC:?}")));
    }
    let header_end = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| err("truncated header"))?;
    let header_text = std::str::from_utf8(&bytes[magic_line.len()..header_end + 1])
        .map_err(|_| err("header is not UTF-8"))?;
    let fields = header_text
        .lines()
        .map(|l| l.split_once('=').ok_or_else(|| err(format!("malformed header line {l:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let h = Header { fields };
    let version: u32 = h.get("format_version")?;
    if version != FORMAT_VERSION {
        return Err(err(format!("unsupported format_version {version}")));
    }
    let config = EncoderConfig {
        vocab_size: h.get("vocab_size")?,
        embed_dim: h.get("embed_dim")?,
        head_hidden: h.get("head_hidden")?,
        head_out: h.get("head_out")?,
        dropout_rate: h.get("dropout_rate")?,
        hash_seed: h.get("hash_seed")?,
    };
    config.validate().map_err(|e| err(e.to_string()))?;
    let loss_config = LossConfig {
        temperature: h.get("temperature")?,
        hard_negatives: h.get("hard_negatives")?,
        eps_norm: h.get("eps_norm")?,
        positive_in_denominator: h.get("positive_in_denominator")?,
    };
    let train_config = TrainConfig {
        batch_size: h.get("batch_size")?,
        epochs: h.get("epochs")?,
        lr_head: h.get("lr_head")?,
        lr_backbone: h.get("lr_backbone")?,
        beta1: h.get("beta1")?,
        beta2: h.get("beta2")?,
        adam_eps: h.get("adam_eps")?,
        shuffle_seed: h.get("shuffle_seed")?,
        init_seed: h.get("init_seed")?,
        dropout_seed: h.get("dropout_seed")?,
        same_dialogue_exclusion: h.get("same_dialogue_exclusion")?,
        keep_partial_batches: h.get("keep_partial_batches")?,
    };
    let digest: String = h.get("train_config_digest")?;
    if digest != train_config_digest(&train_config) {
        return Err(err("train_config_digest does not match the header fields"));
    }

    let body_start = header_end + 2;
    let n_params = config
        .param_count()
        .ok_or_else(|| err("parameter count overflows"))?;
    let body_len = n_params
        .checked_mul(12)
        .ok_or_else(|| err("parameter count overflows"))?;
    let expected_total = body_start
        .checked_add(body_len)
        .and_then(|n| n.checked_add(8))
        .ok_or_else(|| err("parameter count overflows"))?;
    if bytes.len() != expected_total {
        return Err(err(format!(
            "file is {} bytes, expected {expected_total} (truncated or trailing data)",
            bytes.len()
        )));
    }
    let footer = u64::from_le_bytes(bytes[expected_total - 8..].try_into().expect("8 bytes"));
    if footer != (body_start + body_len) as u64 {
        return Err(err(format!("length footer {footer} does not match payload")));
    }

    let mut floats = bytes[body_start..body_start + body_len]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    let mut read_set = || {
        let mut set = ParamSet::<f32>::zeros(&config);
        for (_, group) in set.groups_mut() {
            for x in group.iter_mut() {
                *x = floats.next().expect("length checked");
            }
        }
        set
    };
    let params = read_set();
    let m = read_set();
    let v = read_set();
    Ok(Checkpoint {
        model: EncoderModel { config, params },
        adam: AdamState {
            m,
            v,
            t: h.get("adam_step")?,
        },
        epoch: h.get("epoch")?,
        train_config,
        loss_config,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_to_bytes(ck)?).map_err(|e| DseError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| DseError::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}
