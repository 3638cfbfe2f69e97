//! Network manifests (line-oriented text) and their raw weight blobs.
//!
//! Manifest layout, one record per line, `#` starts a comment:
//!
//! ```text
//! densescan-model 1
//! input_channels 1
//! mean 128
//! scale 0.0078125
//! layer conv kernel=5 stride=2 pad=0 in=1 out=8 from_fc=0 offset=0 count=208
//! layer relu
//! layer maxpool kernel=2 stride=2 pad=0
//! layer fc in=8x6x6 out=16 offset=832 count=4624
//! layer lrn size=5 alpha=0.0001 beta=0.75 k=1
//! layer softmax
//! blob_bytes 19328
//! end
//! ```
//!
//! The blob is the concatenation, in layer order, of each parameterised
//! layer's weights followed by its biases as little-endian IEEE-754 `f32`.
//! `offset` is in bytes, `count` in elements (weights plus biases). Spans are
//! contiguous, ascending and cover the blob exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nnet::{ConvSpec, FcSpec, Layer, LayerSpec, LrnParams, Network, Params, PoolSpec, Preprocess};
use crate::tensor::Shape;

pub const MODEL_MAGIC: &str = "densescan-model";
pub const FORMAT_VERSION: u32 = 1;

/// Byte span of one layer's parameters inside the blob.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlobSpan {
    pub offset: u64,
    pub count: u64,
}

impl BlobSpan {
    pub fn end(&self) -> u64 {
        self.offset + 4 * self.count
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelManifest {
    pub version: u32,
    pub input_channels: usize,
    pub preprocess: Preprocess,
    pub layers: Vec<(LayerSpec, Option<BlobSpan>)>,
    pub blob_bytes: u64,
}

/// `foo` or `foo.manifest` resolves to `foo.manifest` + `foo.weights`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelPaths {
    pub manifest: PathBuf,
    pub weights: PathBuf,
}

impl ModelPaths {
    pub fn from_prefix(prefix: impl AsRef<Path>) -> Self {
        let p = prefix.as_ref();
        let base = if p.extension().is_some_and(|e| e == "manifest" || e == "weights") {
            p.with_extension("")
        } else {
            p.to_path_buf()
        };
        let mut manifest = base.clone().into_os_string();
        manifest.push(".manifest");
        let mut weights = base.into_os_string();
        weights.push(".weights");
        ModelPaths { manifest: manifest.into(), weights: weights.into() }
    }
}

pub(crate) struct Record<'a> {
    pub line: usize,
    pub head: &'a str,
    pub words: Vec<&'a str>,
}

/// Splits text into non-empty, comment-stripped records.
pub(crate) fn records(text: &str) -> impl Iterator<Item = Record<'_>> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut words = content.split_whitespace();
        let head = words.next()?;
        Some(Record { line: i + 1, head, words: words.collect() })
    })
}

pub(crate) struct KeyValues<'a> {
    source: &'a str,
    line: usize,
    map: BTreeMap<&'a str, &'a str>,
}

impl<'a> KeyValues<'a> {
    pub fn parse(source: &'a str, line: usize, words: &[&'a str]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for w in words {
            let (k, v) = w
                .split_once('=')
                .ok_or_else(|| Error::parse(source, line, format!("expected key=value, got `{w}`")))?;
            if map.insert(k, v).is_some() {
                return Err(Error::parse(source, line, format!("duplicate key `{k}`")));
            }
        }
        Ok(KeyValues { source, line, map })
    }

    pub fn take<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let raw =
            self.map.remove(key).ok_or_else(|| Error::parse(self.source, self.line, format!("missing key `{key}`")))?;
        raw.parse().map_err(|_| Error::parse(self.source, self.line, format!("bad value `{raw}` for `{key}`")))
    }

    pub fn finish(self) -> Result<()> {
        match self.map.keys().next() {
            Some(k) => Err(Error::parse(self.source, self.line, format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }
}

fn parse_shape(source: &str, line: usize, raw: &str) -> Result<Shape> {
    let dims: Vec<usize> = raw
        .split('x')
        .map(|d| d.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::parse(source, line, format!("bad shape `{raw}`")))?;
    match dims[..] {
        [c, h, w] => Ok(Shape::new(c, h, w)),
        _ => Err(Error::parse(source, line, format!("shape `{raw}` must be CxHxW"))),
    }
}

fn parse_layer(source: &str, rec: &Record<'_>) -> Result<(LayerSpec, Option<BlobSpan>)> {
    let (kind, rest) =
        rec.words.split_first().ok_or_else(|| Error::parse(source, rec.line, "layer record without a kind"))?;
    let mut kv = KeyValues::parse(source, rec.line, rest)?;
    let spec = match *kind {
        "conv" => LayerSpec::Convolution(ConvSpec {
            kernel: kv.take("kernel")?,
            stride: kv.take("stride")?,
            padding: kv.take("pad")?,
            in_channels: kv.take("in")?,
            out_channels: kv.take("out")?,
            from_fc: kv.take::<u8>("from_fc")? != 0,
        }),
        "maxpool" => LayerSpec::MaxPool(PoolSpec {
            kernel: kv.take("kernel")?,
            stride: kv.take("stride")?,
            padding: kv.take("pad")?,
        }),
        "relu" => LayerSpec::Relu,
        "softmax" => LayerSpec::Softmax,
        "fc" => {
            let raw: String = kv.take("in")?;
            LayerSpec::FullyConnected(FcSpec { input: parse_shape(source, rec.line, &raw)?, outputs: kv.take("out")? })
        }
        "lrn" => LayerSpec::LocalResponseNorm(LrnParams {
            local_size: kv.take("size")?,
            alpha: kv.take("alpha")?,
            beta: kv.take("beta")?,
            k: kv.take("k")?,
        }),
        other => return Err(Error::parse(source, rec.line, format!("unknown layer kind `{other}`"))),
    };
    let span = if spec.param_counts().is_some() {
        Some(BlobSpan { offset: kv.take("offset")?, count: kv.take("count")? })
    } else {
        None
    };
    kv.finish()?;
    Ok((spec, span))
}

/// Parses manifest text. Checks magic, version and blob span layout but not
/// network shape consistency (see [`load_model`]).
pub fn parse_manifest<'a>(text: &'a str, source: &str) -> Result<ModelManifest> {
    let mut recs = records(text);
    let first = recs.next().ok_or(Error::BadMagic { expected: MODEL_MAGIC })?;
    if first.head != MODEL_MAGIC {
        return Err(Error::BadMagic { expected: MODEL_MAGIC });
    }
    let version: u32 = first
        .words
        .first()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::parse(source, first.line, "missing format version"))?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let mut input_channels = None;
    let mut mean = None;
    let mut scale = None;
    let mut layers = Vec::new();
    let mut blob_bytes = None;
    let mut ended = false;
    for rec in recs {
        if ended {
            return Err(Error::parse(source, rec.line, "content after `end`"));
        }
        let single = |rec: &Record<'a>| -> Result<&'a str> {
            match rec.words[..] {
                [v] => Ok(v),
                _ => Err(Error::parse(source, rec.line, format!("`{}` takes one value", rec.head))),
            }
        };
        let num_err = |rec: &Record<'_>| Error::parse(source, rec.line, format!("bad number for `{}`", rec.head));
        match rec.head {
            "input_channels" => input_channels = Some(single(&rec)?.parse::<usize>().map_err(|_| num_err(&rec))?),
            "mean" => {
                let m: Vec<f32> = rec
                    .words
                    .iter()
                    .map(|w| w.parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| num_err(&rec))?;
                mean = Some(m);
            }
            "scale" => scale = Some(single(&rec)?.parse::<f32>().map_err(|_| num_err(&rec))?),
            "layer" => layers.push(parse_layer(source, &rec)?),
            "blob_bytes" => blob_bytes = Some(single(&rec)?.parse::<u64>().map_err(|_| num_err(&rec))?),
            "end" => ended = true,
            other => return Err(Error::parse(source, rec.line, format!("unknown record `{other}`"))),
        }
    }
    let missing = |what: &str| Error::parse(source, 0, format!("manifest lacks `{what}`"));
    if !ended {
        return Err(missing("end"));
    }
    let manifest = ModelManifest {
        version,
        input_channels: input_channels.ok_or_else(|| missing("input_channels"))?,
        preprocess: Preprocess {
            mean: mean.ok_or_else(|| missing("mean"))?,
            scale: scale.ok_or_else(|| missing("scale"))?,
        },
        layers,
        blob_bytes: blob_bytes.ok_or_else(|| missing("blob_bytes"))?,
    };
    check_spans(&manifest)?;
    Ok(manifest)
}

fn check_spans(m: &ModelManifest) -> Result<()> {
    let mut cursor = 0u64;
    for (i, (spec, span)) in m.layers.iter().enumerate() {
        let Some(span) = span else { continue };
        let (nw, nb) = spec.param_counts().expect("span only on parameterised layers");
        if span.count != (nw + nb) as u64 {
            return Err(Error::Config {
                layer: Some(i),
                msg: format!("span holds {} values but the layer needs {}", span.count, nw + nb),
            });
        }
        if span.offset != cursor {
            return Err(Error::Config {
                layer: Some(i),
                msg: format!("span offset {} should be {cursor} (spans must be contiguous)", span.offset),
            });
        }
        cursor = span.end();
    }
    if cursor != m.blob_bytes {
        return Err(Error::config(format!("spans cover {cursor} bytes but blob_bytes is {}", m.blob_bytes)));
    }
    Ok(())
}

fn read_f32s<R: Read>(reader: &mut R, count: usize, layer: usize) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(count);
    let mut buf = [0u8; 4096];
    let mut remaining = count * 4;
    while remaining > 0 {
        let n = remaining.min(buf.len());
        reader.read_exact(&mut buf[..n]).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Truncated { layer },
            _ => Error::Io(e),
        })?;
        out.extend(buf[..n].chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])));
        remaining -= n;
    }
    Ok(out)
}

/// Builds a validated network from a parsed manifest and a blob reader.
pub fn read_model<R: Read>(manifest: &ModelManifest, blob: &mut R) -> Result<Network> {
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (i, (spec, span)) in manifest.layers.iter().enumerate() {
        let layer = match (spec.param_counts(), span) {
            (Some((nw, nb)), Some(_)) => {
                let weights = read_f32s(blob, nw, i)?;
                let bias = read_f32s(blob, nb, i)?;
                Layer::with_params(spec.clone(), weights, bias)
            }
            _ => Layer::new(spec.clone()),
        };
        layers.push(layer);
    }
    let mut probe = [0u8; 1];
    let mut extra = 0u64;
    loop {
        match blob.read(&mut probe)? {
            0 => break,
            n => extra += n as u64,
        }
    }
    if extra > 0 {
        return Err(Error::TrailingBytes { extra });
    }
    Network::new(manifest.input_channels, manifest.preprocess.clone(), layers)
}

pub fn load_model(manifest_path: impl AsRef<Path>, weights_path: impl AsRef<Path>) -> Result<Network> {
    let manifest_path = manifest_path.as_ref();
    let text = std::fs::read_to_string(manifest_path)?;
    let manifest = parse_manifest(&text, &manifest_path.display().to_string())?;
    let mut blob = BufReader::new(File::open(weights_path)?);
    read_model(&manifest, &mut blob)
}

pub fn load_model_prefix(prefix: impl AsRef<Path>) -> Result<Network> {
    let paths = ModelPaths::from_prefix(prefix);
    load_model(&paths.manifest, &paths.weights)
}

fn fmt_f32s(values: &[f32]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

/// Manifest text for `net`; deterministic for identical networks.
pub fn manifest_text(net: &Network) -> String {
    let mut out = String::new();
    out.push_str(&format!("{MODEL_MAGIC} {FORMAT_VERSION}\n"));
    out.push_str(&format!("input_channels {}\n", net.input_channels));
    out.push_str(&format!("mean {}\n", fmt_f32s(&net.preprocess.mean)));
    out.push_str(&format!("scale {}\n", net.preprocess.scale));
    let mut offset = 0u64;
    for layer in &net.layers {
        let body = match &layer.spec {
            LayerSpec::Convolution(c) => format!(
                "conv kernel={} stride={} pad={} in={} out={} from_fc={}",
                c.kernel, c.stride, c.padding, c.in_channels, c.out_channels, c.from_fc as u8
            ),
            LayerSpec::MaxPool(p) => format!("maxpool kernel={} stride={} pad={}", p.kernel, p.stride, p.padding),
            LayerSpec::Relu => "relu".to_string(),
            LayerSpec::Softmax => "softmax".to_string(),
            LayerSpec::FullyConnected(f) => {
                format!("fc in={}x{}x{} out={}", f.input.channels, f.input.height, f.input.width, f.outputs)
            }
            LayerSpec::LocalResponseNorm(l) => {
                format!("lrn size={} alpha={} beta={} k={}", l.local_size, l.alpha, l.beta, l.k)
            }
        };
        match layer.spec.param_counts() {
            Some((nw, nb)) => {
                let count = (nw + nb) as u64;
                out.push_str(&format!("layer {body} offset={offset} count={count}\n"));
                offset += 4 * count;
            }
            None => out.push_str(&format!("layer {body}\n")),
        }
    }
    out.push_str(&format!("blob_bytes {offset}\nend\n"));
    out
}

pub fn write_blob<W: Write>(net: &Network, out: &mut W) -> Result<()> {
    for Params { weights, bias } in net.layers.iter().filter_map(|l| l.params.as_ref()) {
        for v in weights.iter().chain(bias) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_model(net: &Network, manifest_path: impl AsRef<Path>, weights_path: impl AsRef<Path>) -> Result<()> {
    net.validate()?;
    std::fs::write(manifest_path, manifest_text(net))?;
    let mut w = BufWriter::new(File::create(weights_path)?);
    write_blob(net, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn save_model_prefix(net: &Network, prefix: impl AsRef<Path>) -> Result<ModelPaths> {
    let paths = ModelPaths::from_prefix(prefix);
    save_model(net, &paths.manifest, &paths.weights)?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::mininet;

    fn roundtrip(net: &Network) -> Network {
        let text = manifest_text(net);
        let m = parse_manifest(&text, "mem").unwrap();
        let mut blob = Vec::new();
        write_blob(net, &mut blob).unwrap();
        assert_eq!(blob.len() as u64, m.blob_bytes);
        read_model(&m, &mut blob.as_slice()).unwrap()
    }

    fn bits(net: &Network) -> Vec<u32> {
        net.layers
            .iter()
            .filter_map(|l| l.params.as_ref())
            .flat_map(|p| p.weights.iter().chain(&p.bias).map(|v| v.to_bits()))
            .collect()
    }

    #[test]
    fn mininet_roundtrip_is_bitwise() {
        let net = mininet::mininet(3);
        let back = roundtrip(&net);
        assert_eq!(bits(&back), bits(&net));
        assert_eq!(back, net);
        let conv = net.fc_to_conv().unwrap();
        assert_eq!(roundtrip(&conv), conv);
    }

    #[test]
    fn zero_parameter_net() {
        let net =
            Network::new(2, Preprocess::identity(2), vec![Layer::new(LayerSpec::Relu), Layer::new(LayerSpec::Softmax)]);
        // A parameter-free net has no scan window: its geometry search finds
        // a 1x1 output at window 1, so it validates.
        let net = net.unwrap();
        let text = manifest_text(&net);
        assert!(text.contains("blob_bytes 0"));
        let mut blob = Vec::new();
        write_blob(&net, &mut blob).unwrap();
        assert!(blob.is_empty());
        assert_eq!(roundtrip(&net), net);
    }

    #[test]
    fn truncated_blob_names_layer() {
        let net = mininet::mininet(3);
        let m = parse_manifest(&manifest_text(&net), "mem").unwrap();
        let mut blob = Vec::new();
        write_blob(&net, &mut blob).unwrap();
        // Cut inside the third parameterised layer (index 5 in the layer list).
        let cut = m.layers[5].1.unwrap().offset as usize + 8;
        let err = read_model(&m, &mut &blob[..cut]).unwrap_err();
        assert!(matches!(err, Error::Truncated { layer: 5 }), "{err}");
        let mut longer = blob.clone();
        longer.extend_from_slice(&[0; 4]);
        assert!(matches!(read_model(&m, &mut longer.as_slice()), Err(Error::TrailingBytes { extra: 4 })));
    }

    #[test]
    fn header_errors_are_distinct() {
        let net = mininet::mininet(3);
        let text = manifest_text(&net);
        assert!(matches!(parse_manifest(&text.replace(MODEL_MAGIC, "caffe-model"), "m"), Err(Error::BadMagic { .. })));
        assert!(matches!(parse_manifest(&text.replacen(" 1\n", " 7\n", 1), "m"), Err(Error::UnsupportedVersion(7))));
        assert!(matches!(parse_manifest(&text.replace("out=16", "out=17"), "m"), Err(Error::Config { .. })));
        assert!(matches!(
            parse_manifest(&text.replace("kernel=5", "kernel=five"), "m"),
            Err(Error::Parse { line: 5, .. })
        ));
    }

    #[test]
    fn shape_inconsistent_manifest_rejected() {
        let net = mininet::mininet(3);
        // conv2 claims 4 input channels; spans are adjusted so only the shape check fails.
        let mut specs = net.layer_specs();
        if let LayerSpec::Convolution(c) = &mut specs[3] {
            c.in_channels = 4;
        }
        let mut layers = specs.into_iter().map(Layer::new).collect::<Vec<_>>();
        crate::nnet::init::init_uniform(&mut layers, 1);
        let err = Network::new(1, mininet::preprocess(), layers).unwrap_err();
        assert!(matches!(err, Error::Config { layer: Some(3), .. }), "{err}");
    }

    #[test]
    fn prefix_paths() {
        let p = ModelPaths::from_prefix("dir/model");
        assert_eq!(p.manifest, PathBuf::from("dir/model.manifest"));
        assert_eq!(p.weights, PathBuf::from("dir/model.weights"));
        assert_eq!(ModelPaths::from_prefix("dir/model.manifest"), p);
    }
}
