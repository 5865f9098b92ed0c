//! Scene directory layout.
//!
//! A scene directory contains:
//!
//! * `input_Cam000.png` .. `input_Cam{nv*nu-1}.png` — 8-bit RGB views in
//!   row-major grid order (v-major, zero-padded three-digit index),
//! * `parameters.cfg` — flat `key=value` lines with `nu`, `nv`, `disp_min`,
//!   `disp_max` (unknown keys are ignored),
//! * optionally `gt_disp.pfm` — ground-truth disparity of the center view.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_pfm, read_view_png, write_pfm, write_view_png};
use crate::lightfield::{DisparityMap, LightField4D, View};

pub const CONFIG_FILE: &str = "parameters.cfg";
pub const GT_FILE: &str = "gt_disp.pfm";

/// The scene metadata parsed from `parameters.cfg`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub nu: usize,
    pub nv: usize,
    pub disp_min: f32,
    pub disp_max: f32,
}

impl SceneConfig {
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut nu = None;
        let mut nv = None;
        let mut disp_min = None;
        let mut disp_max = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(format!("line {}: expected key=value, got {line:?}", lineno + 1));
            };
            let key = key.trim();
            let value = value.trim();
            macro_rules! parsed {
                () => {
                    Some(
                        value
                            .parse()
                            .map_err(|_| format!("line {}: malformed value for {key}", lineno + 1))?,
                    )
                };
            }
            match key {
                "nu" => nu = parsed!(),
                "nv" => nv = parsed!(),
                "disp_min" => disp_min = parsed!(),
                "disp_max" => disp_max = parsed!(),
                _ => {} // other benchmark parameters are irrelevant here
            }
        }
        let missing = |name| format!("missing key {name}");
        let cfg = SceneConfig {
            nu: nu.ok_or_else(|| missing("nu"))?,
            nv: nv.ok_or_else(|| missing("nv"))?,
            disp_min: disp_min.ok_or_else(|| missing("disp_min"))?,
            disp_max: disp_max.ok_or_else(|| missing("disp_max"))?,
        };
        if !cfg.disp_min.is_finite() || !cfg.disp_max.is_finite() {
            return Err("non-finite disparity bounds".into());
        }
        Ok(cfg)
    }

    pub fn to_text(self) -> String {
        let mut s = String::new();
        writeln!(s, "nu={}", self.nu).unwrap();
        writeln!(s, "nv={}", self.nv).unwrap();
        writeln!(s, "disp_min={}", self.disp_min).unwrap();
        writeln!(s, "disp_max={}", self.disp_max).unwrap();
        s
    }
}

fn view_file_name(index: usize) -> String {
    format!("input_Cam{index:03}.png")
}

/// Loads a scene directory into a light field plus ground truth when present.
pub fn load_scene(dir: impl AsRef<Path>) -> Result<(LightField4D, Option<DisparityMap>)> {
    let dir = dir.as_ref();
    let cfg_path = dir.join(CONFIG_FILE);
    let cfg_text = std::fs::read_to_string(&cfg_path)
        .map_err(|e| Error::scene(dir, format!("cannot read {CONFIG_FILE}: {e}")))?;
    let cfg = SceneConfig::parse(&cfg_text).map_err(|msg| Error::file(&cfg_path, msg))?;

    let mut views = Vec::with_capacity(cfg.nu * cfg.nv);
    for i in 0..cfg.nu * cfg.nv {
        let path = dir.join(view_file_name(i));
        if !path.exists() {
            return Err(Error::scene(dir, format!("missing view {}", view_file_name(i))));
        }
        views.push(read_view_png(&path)?);
    }
    let dim = views[0].dim();
    if let Some(bad) = views.iter().position(|v| v.dim() != dim) {
        return Err(Error::scene(
            dir,
            format!("view {} has a different image size", view_file_name(bad)),
        ));
    }
    let lf = LightField4D::new(views, cfg.nu, cfg.nv, cfg.disp_min, cfg.disp_max)
        .map_err(|e| Error::scene(dir, e.to_string()))?;

    let gt_path = dir.join(GT_FILE);
    let gt = if gt_path.exists() {
        let values = read_pfm(&gt_path)?;
        if values.dim() != (lf.height(), lf.width()) {
            return Err(Error::scene(
                dir,
                format!(
                    "{GT_FILE} is {:?} but views are {:?}",
                    values.dim(),
                    (lf.height(), lf.width())
                ),
            ));
        }
        Some(DisparityMap::all_valid(values).map_err(|e| Error::scene(dir, e.to_string()))?)
    } else {
        None
    };
    Ok((lf, gt))
}

/// Writes a light field (and optional ground truth) as a scene directory.
pub fn save_scene(
    dir: impl AsRef<Path>,
    lf: &LightField4D,
    gt: Option<&DisparityMap>,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let cfg = SceneConfig {
        nu: lf.nu(),
        nv: lf.nv(),
        disp_min: lf.disp_min,
        disp_max: lf.disp_max,
    };
    std::fs::write(dir.join(CONFIG_FILE), cfg.to_text())?;
    for (i, view) in lf.views().iter().enumerate() {
        write_view_png(dir.join(view_file_name(i)), view)?;
    }
    if let Some(gt) = gt {
        write_pfm(dir.join(GT_FILE), &gt.values)?;
    }
    Ok(())
}

/// Quantizes a view the way `save_scene` + `load_scene` will, for tests and
/// tools that compare in-memory scenes against their on-disk round trip.
pub fn quantize_view(view: &View) -> View {
    view.mapv(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Array3};

    fn tiny_lf(nu: usize, nv: usize) -> LightField4D {
        let views = (0..nu * nv)
            .map(|i| {
                Array3::from_shape_fn((3, 4, 6), |(c, y, x)| {
                    (((i + c) * 13 + y * 7 + x * 3) % 256) as f32 / 255.0
                })
            })
            .collect();
        LightField4D::new(views, nu, nv, -1.5, 2.5).unwrap()
    }

    #[test]
    fn scene_round_trip_with_gt() {
        let dir = tempfile::tempdir().unwrap();
        let lf = tiny_lf(3, 3);
        let gt = DisparityMap::all_valid(Array2::from_elem((4, 6), 1.25)).unwrap();
        save_scene(dir.path(), &lf, Some(&gt)).unwrap();

        let (lf2, gt2) = load_scene(dir.path()).unwrap();
        assert_eq!(lf2.nu(), 3);
        assert_eq!(lf2.nv(), 3);
        assert_eq!(lf2.disp_min, -1.5);
        assert_eq!(lf2.disp_max, 2.5);
        for (a, b) in lf.views().iter().zip(lf2.views()) {
            assert_eq!(&quantize_view(a), b);
        }
        assert_eq!(gt2.unwrap().values, gt.values);
    }

    #[test]
    fn scene_without_gt_loads_none() {
        let dir = tempfile::tempdir().unwrap();
        save_scene(dir.path(), &tiny_lf(3, 3), None).unwrap();
        let (_, gt) = load_scene(dir.path()).unwrap();
        assert!(gt.is_none());
    }

    #[test]
    fn missing_view_is_reported_by_name() {
        let dir = tempfile::tempdir().unwrap();
        save_scene(dir.path(), &tiny_lf(3, 3), None).unwrap();
        std::fs::remove_file(dir.path().join("input_Cam004.png")).unwrap();
        let err = load_scene(dir.path()).unwrap_err().to_string();
        assert!(err.contains("missing view"), "{err}");
        assert!(err.contains("input_Cam004"), "{err}");
    }

    #[test]
    fn malformed_config_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        save_scene(dir.path(), &tiny_lf(3, 3), None).unwrap();
        std::fs::write(dir.path().join(CONFIG_FILE), "nu=3\nnv=3\ndisp_min=oops\n").unwrap();
        let err = load_scene(dir.path()).unwrap_err().to_string();
        assert!(err.contains("disp_min"), "{err}");
    }

    #[test]
    fn config_parse_ignores_unknown_keys() {
        let cfg = SceneConfig::parse(
            "# comment\nnu=9\nnv=9\nfocal_length=31\ndisp_min=-2\ndisp_max=2\n",
        )
        .unwrap();
        assert_eq!(cfg.nu, 9);
        assert_eq!(cfg.disp_max, 2.0);
    }
}
