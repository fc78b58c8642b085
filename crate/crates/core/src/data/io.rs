//! On-disk dataset layout:
//!
//! * `meta.json`: format tag, version, factor spec, `shape` `[N, 3, S, S]`,
//!   `style` (single style or `"mixed"`), `segments`, `seed`, `channel_stats`;
//! * `images.bin`: raw u8 pixels, `N×3×S×S` row-major;
//! * `labels.bin`: u16 little-endian factor values, `N×F` row-major.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ChannelStats, Dataset, FactorSpec, Segment};
use crate::error::{Error, Result};

const FORMAT: &str = "featvae-dataset";
const VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    format: String,
    version: u64,
    spec: FactorSpec,
    shape: [usize; 4],
    style: String,
    segments: Vec<Segment>,
    seed: u64,
    channel_stats: ChannelStats,
}

pub fn save(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = Meta {
        format: FORMAT.into(),
        version: VERSION,
        spec: dataset.spec.clone(),
        shape: [dataset.len(), 3, dataset.image_size, dataset.image_size],
        style: dataset
            .style()
            .map(|s| {
                serde_json::to_value(s)
                    .expect("style")
                    .as_str()
                    .unwrap_or("")
                    .to_string()
            })
            .unwrap_or_else(|| "mixed".into()),
        segments: dataset.segments.clone(),
        seed: dataset.segments.first().map_or(0, |s| s.seed),
        channel_stats: dataset.channel_stats,
    };
    fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&meta)?)?;
    fs::write(dir.join("images.bin"), &dataset.images)?;
    let mut labels = Vec::with_capacity(dataset.labels.len() * 2);
    for v in &dataset.labels {
        labels.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(dir.join("labels.bin"), labels)?;
    Ok(())
}

fn field<'a>(obj: &'a Value, name: &str) -> Result<&'a Value> {
    obj.get(name).ok_or_else(|| Error::header(name, "missing"))
}

fn parse<T: serde::de::DeserializeOwned>(obj: &Value, name: &str) -> Result<T> {
    serde_json::from_value(field(obj, name)?.clone()).map_err(|e| Error::header(name, e))
}

pub fn load(dir: &Path) -> Result<Dataset> {
    let raw = fs::read(dir.join("meta.json"))?;
    let meta: Value = serde_json::from_slice(&raw).map_err(|e| Error::format(e.column() as u64, e))?;

    let format: String = parse(&meta, "format")?;
    if format != FORMAT {
        return Err(Error::header("format", format!("expected {FORMAT}, got {format}")));
    }
    let version: u64 = parse(&meta, "version")?;
    if version != VERSION {
        return Err(Error::header("version", format!("unsupported version {version}")));
    }
    let spec: FactorSpec = parse(&meta, "spec")?;
    let shape: [usize; 4] = parse(&meta, "shape")?;
    let [n, channels, h, w] = shape;
    if channels != 3 || h != w || h == 0 || n == 0 {
        return Err(Error::header("shape", format!("expected [N, 3, S, S], got {shape:?}")));
    }
    let segments: Vec<Segment> = parse(&meta, "segments")?;
    if segments.iter().map(|s| s.len).sum::<usize>() != n {
        return Err(Error::header("segments", "segment lengths do not add up to N"));
    }
    let style: String = parse(&meta, "style")?;
    let styles: Vec<String> = segments
        .iter()
        .map(|s| {
            serde_json::to_value(s.style)
                .expect("style")
                .as_str()
                .unwrap_or("")
                .to_string()
        })
        .collect();
    let consistent = if styles.iter().all(|s| *s == styles[0]) {
        style == styles[0]
    } else {
        style == "mixed"
    };
    if !consistent {
        return Err(Error::header("style", format!("`{style}` disagrees with segments")));
    }
    let _seed: u64 = parse(&meta, "seed")?;
    let channel_stats: ChannelStats = parse(&meta, "channel_stats")?;
    channel_stats.validate()?;

    let images = fs::read(dir.join("images.bin"))?;
    let want = n * 3 * h * w;
    if images.len() != want {
        return Err(Error::format(
            images.len().min(want) as u64,
            format!("images.bin holds {} bytes, expected {want}", images.len()),
        ));
    }
    let raw_labels = fs::read(dir.join("labels.bin"))?;
    let want = n * spec.len() * 2;
    if raw_labels.len() != want {
        return Err(Error::format(
            raw_labels.len().min(want) as u64,
            format!("labels.bin holds {} bytes, expected {want}", raw_labels.len()),
        ));
    }
    let cards = spec.cardinalities();
    let mut labels = Vec::with_capacity(n * spec.len());
    for (i, c) in raw_labels.chunks_exact(2).enumerate() {
        let v = u16::from_le_bytes([c[0], c[1]]);
        let k = cards[i % cards.len()];
        if v as usize >= k {
            return Err(Error::format(
                (i * 2) as u64,
                format!("label {v} out of range for factor with {k} values"),
            ));
        }
        labels.push(v);
    }
    Ok(Dataset {
        spec,
        image_size: h,
        images,
        labels,
        segments,
        channel_stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, Style};

    fn sample() -> Dataset {
        let spec = FactorSpec::new([("hue", 3), ("posx", 4)]).unwrap();
        generate(&spec, 16, Style::Real, 3).unwrap()
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = sample();
        save(&d, dir.path()).unwrap();
        assert_eq!(load(dir.path()).unwrap(), d);
        let labels_len = fs::metadata(dir.path().join("labels.bin")).unwrap().len();
        assert_eq!(labels_len as usize, d.len() * d.spec.len() * 2);
    }

    #[test]
    fn corrupted_header_fields_are_named() {
        let d = sample();
        let cases: &[(&str, Value)] = &[
            ("format", Value::from("something-else")),
            ("version", Value::from(7)),
            ("shape", serde_json::json!([12, 4, 16, 16])),
            ("spec", serde_json::json!([{"name": "hue", "cardinality": 1}])),
            ("style", Value::from("toy")),
            ("segments", serde_json::json!([{"style": "real", "seed": 3, "len": 5}])),
            (
                "channel_stats",
                serde_json::json!({"mean": [0, 0, 0], "std": [1, 0, 1]}),
            ),
            ("seed", Value::from("x")),
        ];
        for (name, bad) in cases {
            let dir = tempfile::tempdir().unwrap();
            save(&d, dir.path()).unwrap();
            let path = dir.path().join("meta.json");
            let mut meta: Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
            meta[*name] = bad.clone();
            fs::write(&path, serde_json::to_vec(&meta).unwrap()).unwrap();
            match load(dir.path()) {
                Err(Error::Header { field, .. }) => assert_eq!(field, *name),
                other => panic!("{name}: expected header error, got {other:?}"),
            }
        }
    }

    #[test]
    fn truncated_buffers_report_offset() {
        let dir = tempfile::tempdir().unwrap();
        let d = sample();
        save(&d, dir.path()).unwrap();
        let path = dir.path().join("images.bin");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..100]).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Format { offset: 100, .. })));

        save(&d, dir.path()).unwrap();
        let path = dir.path().join("labels.bin");
        let mut bytes = fs::read(&path).unwrap();
        bytes[6] = 9;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Format { offset: 6, .. })));
    }
}
