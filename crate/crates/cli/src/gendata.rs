use std::fs;
use std::path::Path;

use crossnet::synthdata::{
    generate_dataset, write_dataset, AnnotationKind, BackgroundStyle, SceneSpec,
};

use crate::error::{config_error, io_error, CliError, CliResult};
use crate::keyvalue::KeyValues;
use crate::manifest::{RunManifest, RUN_MANIFEST};

pub const DETECTION_DIR: &str = "detection";
pub const SEGMENTATION_DIR: &str = "segmentation";
pub const TRANSFER_DIR: &str = "transfer";

const KEYS: [&str; 13] = [
    "height",
    "width",
    "n_train",
    "n_test",
    "target_count",
    "target_size",
    "distractor_count",
    "seed",
    "contrast",
    "detection_background",
    "segmentation_background",
    "transfer_background",
    "transfer_contrast",
];

/// Scene distribution of the three generated datasets. The detection set
/// uses `seed`, the segmentation set `seed + 1` and the transfer set
/// `seed + 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub height: usize,
    pub width: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub target_count: (usize, usize),
    pub target_size: (usize, usize),
    pub distractor_count: (usize, usize),
    pub seed: u64,
    pub contrast: f32,
    pub detection_background: BackgroundStyle,
    pub segmentation_background: BackgroundStyle,
    pub transfer_background: BackgroundStyle,
    pub transfer_contrast: f32,
}

impl Default for GenSpec {
    fn default() -> Self {
        let base = SceneSpec::desk_default(BackgroundStyle::ClutterNoise, 1);
        GenSpec {
            height: base.height,
            width: base.width,
            n_train: 300,
            n_test: 100,
            target_count: base.target_count,
            target_size: base.target_size,
            distractor_count: base.distractor_count,
            seed: 1,
            contrast: 1.0,
            detection_background: BackgroundStyle::ClutterNoise,
            segmentation_background: BackgroundStyle::SmoothGradient,
            transfer_background: BackgroundStyle::HeavyClutter,
            transfer_contrast: 0.6,
        }
    }
}

/// One dataset to generate: directory name, scene spec, split sizes and
/// annotation kind.
pub type DatasetPlan = (&'static str, SceneSpec, usize, usize, AnnotationKind);

impl GenSpec {
    pub fn parse(text: &str) -> CliResult<Self> {
        let kv = KeyValues::parse(text, &KEYS)?;
        let mut spec = GenSpec::default();
        kv.set("height", &mut spec.height)?;
        kv.set("width", &mut spec.width)?;
        kv.set("n_train", &mut spec.n_train)?;
        kv.set("n_test", &mut spec.n_test)?;
        kv.range("target_count", &mut spec.target_count)?;
        kv.range("target_size", &mut spec.target_size)?;
        kv.range("distractor_count", &mut spec.distractor_count)?;
        kv.set("seed", &mut spec.seed)?;
        kv.set("contrast", &mut spec.contrast)?;
        kv.set("detection_background", &mut spec.detection_background)?;
        kv.set("segmentation_background", &mut spec.segmentation_background)?;
        kv.set("transfer_background", &mut spec.transfer_background)?;
        kv.set("transfer_contrast", &mut spec.transfer_contrast)?;
        if spec.detection_background == spec.segmentation_background {
            return Err(kv.reject(
                "segmentation_background",
                "must differ from detection_background",
            ));
        }
        if spec.n_train == 0 {
            return Err(kv.reject("n_train", "must be at least 1"));
        }
        if spec.n_test == 0 {
            return Err(kv.reject("n_test", "must be at least 1"));
        }
        for (_, scene, ..) in spec.datasets() {
            scene.validate()?;
        }
        Ok(spec)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Core(crossnet::Error::Config(msg)) => {
                config_error(format!("{}: {msg}", path.display()))
            }
            other => other,
        })
    }

    pub fn to_text(&self) -> String {
        format!(
            "height={}\nwidth={}\nn_train={}\nn_test={}\ntarget_count={},{}\ntarget_size={},{}\n\
             distractor_count={},{}\nseed={}\ncontrast={}\ndetection_background={}\n\
             segmentation_background={}\ntransfer_background={}\ntransfer_contrast={}\n",
            self.height,
            self.width,
            self.n_train,
            self.n_test,
            self.target_count.0,
            self.target_count.1,
            self.target_size.0,
            self.target_size.1,
            self.distractor_count.0,
            self.distractor_count.1,
            self.seed,
            self.contrast,
            self.detection_background,
            self.segmentation_background,
            self.transfer_background,
            self.transfer_contrast
        )
    }

    fn scene(&self, background: BackgroundStyle, contrast: f32, seed: u64) -> SceneSpec {
        SceneSpec {
            height: self.height,
            width: self.width,
            target_count: self.target_count,
            target_size: self.target_size,
            distractor_count: self.distractor_count,
            background,
            contrast,
            seed,
        }
    }

    /// Detection (boxes), segmentation (masks) and transfer (boxes, test
    /// split only) datasets.
    pub fn datasets(&self) -> [DatasetPlan; 3] {
        [
            (
                DETECTION_DIR,
                self.scene(self.detection_background, self.contrast, self.seed),
                self.n_train,
                self.n_test,
                AnnotationKind::Boxes,
            ),
            (
                SEGMENTATION_DIR,
                self.scene(self.segmentation_background, self.contrast, self.seed.wrapping_add(1)),
                self.n_train,
                self.n_test,
                AnnotationKind::Masks,
            ),
            (
                TRANSFER_DIR,
                self.scene(self.transfer_background, self.transfer_contrast, self.seed.wrapping_add(2)),
                0,
                self.n_test,
                AnnotationKind::Boxes,
            ),
        ]
    }
}

fn is_empty_dir(path: &Path) -> CliResult<bool> {
    Ok(fs::read_dir(path).map_err(|e| io_error(path, e))?.next().is_none())
}

/// Writes the three datasets and a run manifest under `out`. An existing
/// non-empty `out` is only overwritten with `force`.
pub fn gen_data(spec: &GenSpec, out: &Path, force: bool) -> CliResult<()> {
    if out.exists() {
        if !out.is_dir() {
            return Err(config_error(format!("{} exists and is not a directory", out.display())));
        }
        if !is_empty_dir(out)? {
            if !force {
                return Err(config_error(format!(
                    "{} is not empty; pass --force to overwrite",
                    out.display()
                )));
            }
            for name in [DETECTION_DIR, SEGMENTATION_DIR, TRANSFER_DIR] {
                let d = out.join(name);
                if d.exists() {
                    fs::remove_dir_all(&d).map_err(|e| io_error(&d, e))?;
                }
            }
        }
    }
    for (name, scene, n_train, n_test, kind) in spec.datasets() {
        let ds = generate_dataset(&scene, n_train, n_test, kind)?;
        write_dataset(&ds, &out.join(name))?;
    }
    RunManifest::new("gen-data", &spec.to_text(), Some(spec.seed), &[])?
        .write(&out.join(RUN_MANIFEST))
}
