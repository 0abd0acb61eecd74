//! Ring-vector files and the line-oriented network description.
//!
//! A ring-vector file is an 8-byte little-endian element count followed by
//! the elements, each `ceil(l / 8)` bytes little-endian. A network file has
//! one layer per line:
//!
//! ```text
//! INPUT c h w
//! FC in out weights=<path> [bias=<path>]
//! CONV cin cout w h stride pad weights=<path> [bias=<path>]
//! RELU
//! MAXPOOL w s
//! BATCHNORM params=<path>
//! LAYERNORM params=<path>
//! SOFTMAX
//! ```
//!
//! `INPUT` is optional when the first layer is `FC`. Paths are relative to
//! the network file. Normalisation parameter files hold `gamma, beta, mean,
//! var` per channel, or `gamma, beta` per feature.

use std::fs;
use std::path::{Path, PathBuf};

use lthmpc_core::infer::{Layer, NetworkSpec, Shape};
use lthmpc_core::Ring;

#[derive(Debug, thiserror::Error)]
pub enum FileError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> FileError + '_ {
    move |source| FileError::Io { path: path.to_owned(), source }
}

pub fn encode_vector(ring: Ring, v: &[u64]) -> Vec<u8> {
    let mut out = (v.len() as u64).to_le_bytes().to_vec();
    ring.write_elems(v, &mut out);
    out
}

pub fn decode_vector(ring: Ring, bytes: &[u8]) -> Result<Vec<u64>, String> {
    let (head, body) = bytes.split_at_checked(8).ok_or("missing 8-byte length header")?;
    let n = u64::from_le_bytes(head.try_into().expect("8 bytes"));
    let w = ring.byte_len() as u64;
    if n.checked_mul(w) != Some(body.len() as u64) {
        return Err(format!("header declares {n} elements of {w} bytes, body has {} bytes", body.len()));
    }
    ring.decode_elems(body).map_err(|e| e.to_string())
}

pub fn read_vector(ring: Ring, path: &Path) -> Result<Vec<u64>, FileError> {
    let bytes = fs::read(path).map_err(io(path))?;
    decode_vector(ring, &bytes).map_err(|msg| FileError::Format { path: path.to_owned(), msg })
}

pub fn write_vector(ring: Ring, path: &Path, v: &[u64]) -> Result<(), FileError> {
    fs::write(path, encode_vector(ring, v)).map_err(io(path))
}

struct Line<'a> {
    path: &'a Path,
    no: usize,
    words: Vec<&'a str>,
}

impl Line<'_> {
    fn err(&self, msg: impl Into<String>) -> FileError {
        FileError::Parse { path: self.path.to_owned(), line: self.no, msg: msg.into() }
    }

    fn positional(&self) -> Vec<&str> {
        self.words[1..].iter().copied().filter(|w| !w.contains('=')).collect()
    }

    fn numbers<const K: usize>(&self) -> Result<[usize; K], FileError> {
        let pos = self.positional();
        if pos.len() != K {
            return Err(self.err(format!("{} expects {K} numbers, got {}", self.words[0], pos.len())));
        }
        let mut out = [0; K];
        for (o, w) in out.iter_mut().zip(pos) {
            *o = w.parse().map_err(|_| self.err(format!("bad number {w:?}")))?;
        }
        Ok(out)
    }

    fn key(&self, k: &str) -> Option<&str> {
        self.words[1..].iter().find_map(|w| w.strip_prefix(k).and_then(|r| r.strip_prefix('=')))
    }

    fn only_keys(&self, allowed: &[&str]) -> Result<(), FileError> {
        for w in &self.words[1..] {
            if let Some((k, _)) = w.split_once('=') {
                if !allowed.contains(&k) {
                    return Err(self.err(format!("unknown option {k:?}")));
                }
            }
        }
        Ok(())
    }
}

/// Parses a network file. With `load_params` false, weight and bias files
/// are not read; the result then describes only the architecture, as held
/// by parties that do not own the model.
pub fn read_network(ring: Ring, path: &Path, load_params: bool) -> Result<NetworkSpec, FileError> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let load = |line: &Line, key: &str, expect: usize, required: bool| -> Result<Option<Vec<u64>>, FileError> {
        let Some(rel) = line.key(key) else {
            return if required { Err(line.err(format!("missing {key}="))) } else { Ok(None) };
        };
        let p = dir.join(rel);
        let v = read_vector(ring, &p)?;
        if v.len() != expect {
            return Err(line.err(format!("{} holds {} values, expected {expect}", p.display(), v.len())));
        }
        Ok(Some(v))
    };
    let mut input = None;
    let mut layers = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let line = Line { path, no: i + 1, words: content.split_whitespace().collect() };
        let kind = line.words[0].to_ascii_uppercase();
        let layer = match kind.as_str() {
            "INPUT" => {
                line.only_keys(&[])?;
                if input.is_some() || !layers.is_empty() {
                    return Err(line.err("INPUT must come first and only once"));
                }
                let [c, h, w] = line.numbers()?;
                input = Some(Shape { c, h, w });
                continue;
            }
            "FC" => {
                line.only_keys(&["weights", "bias"])?;
                let [inp, out] = line.numbers()?;
                let bias = match load_params {
                    true => load(&line, "bias", out, false)?,
                    false => line.key("bias").map(|_| Vec::new()),
                };
                let weights = if load_params { load(&line, "weights", inp * out, true)? } else { None };
                Layer::Fc { inp, out, weights, bias }
            }
            "CONV" => {
                line.only_keys(&["weights", "bias"])?;
                let [cin, cout, kw, kh, stride, pad] = line.numbers()?;
                let bias = match load_params {
                    true => load(&line, "bias", cout, false)?,
                    false => line.key("bias").map(|_| Vec::new()),
                };
                let weights = if load_params { load(&line, "weights", cout * cin * kh * kw, true)? } else { None };
                Layer::Conv { cin, cout, kw, kh, stride, pad, weights, bias }
            }
            "RELU" | "SOFTMAX" => {
                line.only_keys(&[])?;
                line.numbers::<0>()?;
                if kind == "RELU" { Layer::Relu } else { Layer::Softmax }
            }
            "MAXPOOL" => {
                line.only_keys(&[])?;
                let [window, stride] = line.numbers()?;
                Layer::MaxPool { window, stride }
            }
            "BATCHNORM" | "LAYERNORM" => {
                line.only_keys(&["params"])?;
                line.numbers::<0>()?;
                let rel = line.key("params").ok_or_else(|| line.err("missing params="))?;
                let v = read_vector(ring, &dir.join(rel))?;
                let parts = if kind == "BATCHNORM" { 4 } else { 2 };
                if v.is_empty() || v.len() % parts != 0 {
                    return Err(line.err(format!("{} values do not split into {parts} equal parts", v.len())));
                }
                let mut chunks = v.chunks(v.len() / parts).map(<[u64]>::to_vec);
                let mut next = || chunks.next().expect("split into parts");
                if kind == "BATCHNORM" {
                    Layer::BatchNorm { gamma: next(), beta: next(), mean: next(), var: next() }
                } else {
                    Layer::LayerNorm { gamma: next(), beta: next() }
                }
            }
            other => return Err(line.err(format!("unknown layer {other:?}"))),
        };
        layers.push(layer);
    }
    let input = match (input, layers.first()) {
        (Some(s), _) => s,
        (None, Some(Layer::Fc { inp, .. })) => Shape::flat(*inp),
        _ => return Err(FileError::Format { path: path.to_owned(), msg: "INPUT line required unless the first layer is FC".into() }),
    };
    let spec = NetworkSpec { input, layers };
    spec.shapes().map_err(|e| FileError::Format { path: path.to_owned(), msg: e.to_string() })?;
    Ok(spec)
}

/// Writes `spec` as `<dir>/<name>.spec` with one parameter file per layer.
pub fn write_network(ring: Ring, dir: &Path, name: &str, spec: &NetworkSpec) -> Result<PathBuf, FileError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let missing = |i: usize| FileError::Format { path: dir.to_owned(), msg: format!("layer {i} has no parameters to write") };
    let mut text = format!("INPUT {} {} {}\n", spec.input.c, spec.input.h, spec.input.w);
    let put = |file: String, v: &[u64]| -> Result<String, FileError> {
        write_vector(ring, &dir.join(&file), v)?;
        Ok(file)
    };
    for (i, l) in spec.layers.iter().enumerate() {
        let line = match l {
            Layer::Fc { inp, out, weights, bias } | Layer::Conv { cin: inp, cout: out, weights, bias, .. } => {
                let w = put(format!("{name}.l{i}.weights.bin"), weights.as_deref().ok_or_else(|| missing(i))?)?;
                let head = match l {
                    Layer::Conv { kw, kh, stride, pad, .. } => format!("CONV {inp} {out} {kw} {kh} {stride} {pad}"),
                    _ => format!("FC {inp} {out}"),
                };
                match bias {
                    Some(b) if !b.is_empty() => format!("{head} weights={w} bias={}", put(format!("{name}.l{i}.bias.bin"), b)?),
                    Some(_) => return Err(missing(i)),
                    None => format!("{head} weights={w}"),
                }
            }
            Layer::Relu => "RELU".into(),
            Layer::Softmax => "SOFTMAX".into(),
            Layer::MaxPool { window, stride } => format!("MAXPOOL {window} {stride}"),
            Layer::BatchNorm { gamma, beta, mean, var } => {
                let v: Vec<u64> = [gamma, beta, mean, var].into_iter().flatten().copied().collect();
                format!("BATCHNORM params={}", put(format!("{name}.l{i}.params.bin"), &v)?)
            }
            Layer::LayerNorm { gamma, beta } => {
                let v: Vec<u64> = [gamma, beta].into_iter().flatten().copied().collect();
                format!("LAYERNORM params={}", put(format!("{name}.l{i}.params.bin"), &v)?)
            }
        };
        text.push_str(&line);
        text.push('\n');
    }
    let path = dir.join(format!("{name}.spec"));
    fs::write(&path, text).map_err(io(&path))?;
    Ok(path)
}
