//! Line-oriented text checkpoints. Values use 17 significant digits, which
//! round-trips every `f64` exactly.
//!
//! ```text
//! rgnn-checkpoint 1
//! kind rgnn-t
//! t 1
//! cumulative false
//! dim 16
//! layers 8
//! shared true
//! readout diagonal
//! preds 2
//! pred Tri 3
//! pred at 4
//! embed-rows 0
//! params 9
//! param msg/Tri.w1 48 16
//! <one line of 16 values per row>
//! ...
//! end
//! ```

use std::path::Path;

use thiserror::Error;

use crate::autodiff::{ParameterSet, Tensor};
use crate::net::{Model, ModelKind, NetError, Readout, RgnnConfig};

pub const FORMAT_HEADER: &str = "rgnn-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub fn to_text(model: &Model) -> String {
    let kind = model.kind();
    let (t, cumulative) = match kind {
        ModelKind::RgnnT { t, cumulative } => (t, cumulative),
        _ => (0, false),
    };
    let cfg = model.config();
    let mut out = String::new();
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    line(format!("{FORMAT_HEADER} {FORMAT_VERSION}"));
    line(format!("kind {}", kind.tag()));
    line(format!("t {t}"));
    line(format!("cumulative {cumulative}"));
    line(format!("dim {}", cfg.embed_dim));
    line(format!("layers {}", cfg.layers));
    line(format!("shared {}", cfg.shared_weights));
    line(format!("readout {}", cfg.readout.tag()));
    line(format!("preds {}", model.preds().len()));
    for (name, arity) in model.preds() {
        line(format!("pred {name} {arity}"));
    }
    line(format!("embed-rows {}", model.embed_rows().len()));
    for row in model.embed_rows() {
        line(format!("embed {row}"));
    }
    let params = model.params();
    line(format!("params {}", params.len()));
    for id in params.ids() {
        let v = params.value(id);
        line(format!("param {} {} {}", params.name(id), v.rows, v.cols));
        for r in 0..v.rows {
            let row: Vec<String> = v.data[r * v.cols..(r + 1) * v.cols]
                .iter()
                .map(|x| format!("{x:.16e}"))
                .collect();
            line(row.join(" "));
        }
    }
    line("end".to_string());
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, msg: impl Into<String>) -> CheckpointError {
        CheckpointError::Parse {
            line: self.last,
            msg: msg.into(),
        }
    }

    fn next(&mut self) -> Result<&'a str, CheckpointError> {
        match self.inner.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok(l.trim_end())
            }
            None => {
                self.last += 1;
                Err(self.err("unexpected end of file"))
            }
        }
    }

    /// `key value...`, returning the value fields.
    fn field(&mut self, key: &str) -> Result<Vec<&'a str>, CheckpointError> {
        let l = self.next()?;
        let mut parts = l.split_whitespace();
        if parts.next() != Some(key) {
            return Err(self.err(format!("expected `{key}`")));
        }
        Ok(parts.collect())
    }

    fn single<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, CheckpointError> {
        let v = self.field(key)?;
        match v[..] {
            [one] => one.parse().map_err(|_| self.err(format!("invalid `{key}` value `{one}`"))),
            _ => Err(self.err(format!("`{key}` takes one value"))),
        }
    }
}

pub fn from_text(text: &str) -> Result<Model, CheckpointError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let version: u32 = lines.single(FORMAT_HEADER)?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let tag: String = lines.single("kind")?;
    if ModelKind::from_tag(&tag, 0, false).is_none() {
        return Err(lines.err(format!("unknown kind `{tag}`")));
    }
    let t: usize = lines.single("t")?;
    let cumulative: bool = lines.single("cumulative")?;
    let kind = ModelKind::from_tag(&tag, t, cumulative).expect("tag checked above");
    let embed_dim = lines.single("dim")?;
    let layers = lines.single("layers")?;
    let shared_weights = lines.single("shared")?;
    let readout: String = lines.single("readout")?;
    let readout = Readout::from_tag(&readout).ok_or_else(|| lines.err(format!("unknown readout `{readout}`")))?;
    let config = RgnnConfig {
        embed_dim,
        layers,
        shared_weights,
        readout,
    };
    let npreds: usize = lines.single("preds")?;
    let mut preds = Vec::with_capacity(npreds);
    for _ in 0..npreds {
        let f = lines.field("pred")?;
        match f[..] {
            [name, arity] => {
                let arity = arity.parse().map_err(|_| lines.err("invalid arity"))?;
                preds.push((name.to_string(), arity));
            }
            _ => return Err(lines.err("expected `pred <name> <arity>`")),
        }
    }
    let nrows: usize = lines.single("embed-rows")?;
    let mut embed_rows = Vec::with_capacity(nrows);
    for _ in 0..nrows {
        embed_rows.push(lines.single::<String>("embed")?);
    }
    let nparams: usize = lines.single("params")?;
    let mut params = ParameterSet::new();
    for _ in 0..nparams {
        let f = lines.field("param")?;
        let (name, rows, cols) = match f[..] {
            [name, r, c] => match (r.parse::<usize>(), c.parse::<usize>()) {
                (Ok(r), Ok(c)) => (name, r, c),
                _ => return Err(lines.err("invalid shape")),
            },
            _ => return Err(lines.err("expected `param <name> <rows> <cols>`")),
        };
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let l = lines.next()?;
            let before = data.len();
            for x in l.split_whitespace() {
                data.push(x.parse::<f64>().map_err(|_| lines.err(format!("invalid number `{x}`")))?);
            }
            if data.len() - before != cols {
                return Err(lines.err(format!("expected {cols} values")));
            }
        }
        params
            .add(name, Tensor::from_vec(rows, cols, data).map_err(NetError::from)?)
            .map_err(|e| lines.err(e.to_string()))?;
    }
    if lines.next()? != "end" {
        return Err(lines.err("expected `end`"));
    }
    Ok(Model::from_parts(kind, config, preds, embed_rows, params)?)
}

pub fn save(model: &Model, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, to_text(model)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: &Path) -> Result<Model, CheckpointError> {
    let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pddl::parse_domain;
    use crate::pddl::tests::GRIPPER_DOMAIN;

    fn models() -> Vec<Model> {
        let d = parse_domain(GRIPPER_DOMAIN).unwrap();
        let kinds = [
            ModelKind::Rgnn,
            ModelKind::RgnnT { t: 1, cumulative: false },
            ModelKind::RgnnT { t: 2, cumulative: true },
            ModelKind::Rgnn2,
            ModelKind::TwoGnn,
        ];
        let mut out: Vec<Model> = kinds
            .iter()
            .map(|&k| Model::new(k, RgnnConfig::new(k, 4, 2), &d.vocab, 3).unwrap())
            .collect();
        let k = ModelKind::RgnnT { t: 0, cumulative: false };
        let mut cfg = RgnnConfig::new(k, 3, 2);
        cfg.shared_weights = false;
        out.push(Model::new(k, cfg, &d.vocab, 5).unwrap());
        out
    }

    #[test]
    fn round_trip_is_exact() {
        for m in models() {
            let text = to_text(&m);
            let back = from_text(&text).unwrap();
            assert_eq!(back.kind(), m.kind());
            assert_eq!(back.config(), m.config());
            assert_eq!(back.preds(), m.preds());
            assert_eq!(back.embed_rows(), m.embed_rows());
            for id in m.params().ids() {
                let (a, b) = (m.params().value(id), back.params().value(id));
                assert_eq!(a.shape(), b.shape());
                assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
            assert_eq!(to_text(&back), text);
        }
    }

    #[test]
    fn awkward_values_survive() {
        let mut m = models().remove(0);
        let id = m.params().ids().next().unwrap();
        let vals = [f64::MIN_POSITIVE, -0.0, 1.0 / 3.0, f64::MAX, 5e-324, -123456789.123456789];
        for (slot, v) in m.params_mut().value_mut(id).data.iter_mut().zip(vals) {
            *slot = v;
        }
        let back = from_text(&to_text(&m)).unwrap();
        let got = &back.params().value(id).data[..vals.len()];
        for (g, v) in got.iter().zip(vals) {
            assert_eq!(g.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn rejects_damage() {
        let text = to_text(&models().remove(1));
        assert!(matches!(
            from_text(&text.replace("rgnn-checkpoint 1", "rgnn-checkpoint 9")),
            Err(CheckpointError::Version(9))
        ));
        assert!(matches!(
            from_text(&text.replace("kind rgnn-t", "kind gnn")),
            Err(CheckpointError::Parse { line: 2, .. })
        ));
        let truncated: String = text.lines().take(20).map(|l| format!("{l}\n")).collect();
        assert!(matches!(from_text(&truncated), Err(CheckpointError::Parse { line: 21, .. })));
        assert!(matches!(from_text(&text.replace("dim 4", "dim 5")), Err(CheckpointError::Net(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = models().remove(2);
        save(&m, &path).unwrap();
        assert_eq!(to_text(&load(&path).unwrap()), to_text(&m));
        assert!(matches!(load(&dir.path().join("none")), Err(CheckpointError::Io { .. })));
    }
}
