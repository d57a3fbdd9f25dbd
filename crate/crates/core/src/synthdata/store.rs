use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::pnm::{encode_pgm, encode_ppm, read_pgm, read_ppm};
use super::{AnnotationKind, Dataset, GtBox, Sample, SceneSpec};

/// Manifest file name inside a dataset directory.
pub const MANIFEST: &str = "manifest.txt";
const HEADER: &str = "crossnet-dataset v1";

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn encode_manifest(ds: &Dataset) -> String {
    let s = &ds.spec;
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    let lines = [
        ("kind", ds.kind.to_string()),
        ("n_train", ds.n_train.to_string()),
        ("n_test", ds.n_test.to_string()),
        ("height", s.height.to_string()),
        ("width", s.width.to_string()),
        ("target_count", format!("{},{}", s.target_count.0, s.target_count.1)),
        ("target_size", format!("{},{}", s.target_size.0, s.target_size.1)),
        (
            "distractor_count",
            format!("{},{}", s.distractor_count.0, s.distractor_count.1),
        ),
        ("background", s.background.to_string()),
        ("contrast", s.contrast.to_string()),
        ("seed", s.seed.to_string()),
    ];
    for (k, v) in lines {
        out.push_str(&format!("{k}={v}\n"));
    }
    for sample in &ds.samples {
        out.push_str(&format!("sample={}\n", sample.name));
    }
    out
}

fn encode_boxes(boxes: &[GtBox]) -> String {
    boxes
        .iter()
        .map(|b| format!("{} {} {} {} {}\n", b.x, b.y, b.w, b.h, b.class))
        .collect()
}

/// Writes images, annotations and the manifest into `dir`, creating it if
/// needed.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for sample in &ds.samples {
        write_file(&dir.join(format!("{}.ppm", sample.name)), &encode_ppm(&sample.image))?;
        if let Some(boxes) = &sample.boxes {
            write_file(
                &dir.join(format!("{}.boxes.txt", sample.name)),
                encode_boxes(boxes).as_bytes(),
            )?;
        }
        if let Some(labels) = &sample.labels {
            write_file(&dir.join(format!("{}.label.pgm", sample.name)), &encode_pgm(labels))?;
        }
        if let Some(inst) = &sample.instances {
            write_file(&dir.join(format!("{}.inst.pgm", sample.name)), &encode_pgm(inst))?;
        }
    }
    write_file(&dir.join(MANIFEST), encode_manifest(ds).as_bytes())
}

fn parse_num<T: std::str::FromStr>(path: &Path, line: usize, key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| {
        Error::format(format!(
            "{}:{line}: invalid value {v:?} for {key}",
            path.display()
        ))
    })
}

fn parse_range(path: &Path, line: usize, key: &str, v: &str) -> Result<(usize, usize)> {
    let (lo, hi) = v.split_once(',').ok_or_else(|| {
        Error::format(format!("{}:{line}: {key} must be lo,hi", path.display()))
    })?;
    Ok((
        parse_num(path, line, key, lo)?,
        parse_num(path, line, key, hi)?,
    ))
}

struct Manifest {
    spec: SceneSpec,
    kind: AnnotationKind,
    n_train: usize,
    n_test: usize,
    names: Vec<String>,
}

fn parse_manifest(path: &Path, text: &str) -> Result<Manifest> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == HEADER => {}
        _ => {
            return Err(Error::format(format!(
                "{}: missing {HEADER:?} header",
                path.display()
            )))
        }
    }
    let mut spec = SceneSpec::desk_default(super::BackgroundStyle::SmoothGradient, 0);
    let mut kind = None;
    let (mut n_train, mut n_test) = (None, None);
    let mut seen = std::collections::BTreeSet::new();
    let mut names = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        let (key, v) = line.split_once('=').ok_or_else(|| {
            Error::format(format!("{}:{n}: expected key=value", path.display()))
        })?;
        if key != "sample" && !seen.insert(key.to_string()) {
            return Err(Error::format(format!("{}:{n}: duplicate key {key}", path.display())));
        }
        match key {
            "kind" => kind = Some(v.parse::<AnnotationKind>()?),
            "n_train" => n_train = Some(parse_num(path, n, key, v)?),
            "n_test" => n_test = Some(parse_num(path, n, key, v)?),
            "height" => spec.height = parse_num(path, n, key, v)?,
            "width" => spec.width = parse_num(path, n, key, v)?,
            "target_count" => spec.target_count = parse_range(path, n, key, v)?,
            "target_size" => spec.target_size = parse_range(path, n, key, v)?,
            "distractor_count" => spec.distractor_count = parse_range(path, n, key, v)?,
            "background" => spec.background = v.parse()?,
            "contrast" => spec.contrast = parse_num(path, n, key, v)?,
            "seed" => spec.seed = parse_num(path, n, key, v)?,
            "sample" => {
                if v.is_empty() || v.contains(['/', '\\']) {
                    return Err(Error::format(format!(
                        "{}:{n}: invalid sample name {v:?}",
                        path.display()
                    )));
                }
                names.push(v.to_string());
            }
            other => {
                return Err(Error::format(format!(
                    "{}:{n}: unknown key {other}",
                    path.display()
                )))
            }
        }
    }
    const REQUIRED: [&str; 11] = [
        "kind",
        "n_train",
        "n_test",
        "height",
        "width",
        "target_count",
        "target_size",
        "distractor_count",
        "background",
        "contrast",
        "seed",
    ];
    if let Some(missing) = REQUIRED.iter().find(|k| !seen.contains(**k)) {
        return Err(Error::format(format!("{}: missing key {missing}", path.display())));
    }
    let (n_train, n_test) = (n_train.unwrap_or(0), n_test.unwrap_or(0));
    if names.len() != n_train + n_test {
        return Err(Error::format(format!(
            "{}: lists {} samples, expected {}",
            path.display(),
            names.len(),
            n_train + n_test
        )));
    }
    Ok(Manifest {
        spec,
        kind: kind.unwrap_or(AnnotationKind::Both),
        n_train,
        n_test,
        names,
    })
}

fn parse_boxes(path: &Path, text: &str) -> Result<Vec<GtBox>> {
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.len() != 5 {
            return Err(Error::format(format!(
                "{}:{}: expected \"x y w h class\"",
                path.display(),
                i + 1
            )));
        }
        let b = GtBox {
            x: parse_num(path, i + 1, "x", fields[0])?,
            y: parse_num(path, i + 1, "y", fields[1])?,
            w: parse_num(path, i + 1, "w", fields[2])?,
            h: parse_num(path, i + 1, "h", fields[3])?,
            class: parse_num(path, i + 1, "class", fields[4])?,
        };
        if b.w == 0 || b.h == 0 {
            return Err(Error::format(format!(
                "{}:{}: empty box",
                path.display(),
                i + 1
            )));
        }
        boxes.push(b);
    }
    Ok(boxes)
}

fn check_dims(path: &Path, w: usize, h: usize, spec: &SceneSpec) -> Result<()> {
    if (w, h) != (spec.width, spec.height) {
        return Err(Error::format(format!(
            "{}: {w}x{h} does not match the manifest size {}x{}",
            path.display(),
            spec.width,
            spec.height
        )));
    }
    Ok(())
}

/// Reads a dataset written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let m = parse_manifest(&mpath, &text)?;
    let mut samples = Vec::with_capacity(m.names.len());
    for name in m.names {
        let ipath = dir.join(format!("{name}.ppm"));
        let image = read_ppm(&ipath)?;
        check_dims(&ipath, image.width, image.height, &m.spec)?;
        let boxes = if m.kind.has_boxes() {
            let p = dir.join(format!("{name}.boxes.txt"));
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            Some(parse_boxes(&p, &text)?)
        } else {
            None
        };
        let (labels, instances) = if m.kind.has_masks() {
            let lp = dir.join(format!("{name}.label.pgm"));
            let ip = dir.join(format!("{name}.inst.pgm"));
            let labels = read_pgm(&lp)?;
            check_dims(&lp, labels.width, labels.height, &m.spec)?;
            let inst = read_pgm(&ip)?;
            check_dims(&ip, inst.width, inst.height, &m.spec)?;
            (Some(labels), Some(inst))
        } else {
            (None, None)
        };
        samples.push(Sample {
            name,
            image,
            boxes,
            labels,
            instances,
        });
    }
    Ok(Dataset {
        spec: m.spec,
        kind: m.kind,
        n_train: m.n_train,
        n_test: m.n_test,
        samples,
    })
}
