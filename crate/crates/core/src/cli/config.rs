//! `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Lists are comma separated.
//! Recognised keys (defaults in brackets):
//!
//! | key | meaning |
//! |-----|---------|
//! | `f0` | carrier (Hz) [3e6] |
//! | `bandwidth` | sweep bandwidth `B` (Hz) [0.6 f0] |
//! | `time_bandwidth` | `D`; sets the pulse length `D / B` [60] |
//! | `pulse_duration` | pulse length (s), overrides `time_bandwidth` |
//! | `window` | `rect` or `tukey[:fraction]` [tukey:0.1] |
//! | `fs` | sample rate (Hz) [4 fc] |
//! | `fc` | transducer centre frequency for the oversampling factor (Hz) [2.9e6] |
//! | `acquisition` | window `T` (s) [120e-6] |
//! | `elements`, `pitch`, `sound_speed` | array [64, 3e-4 m, 1540 m/s] |
//! | `phantom_file` | scatterer file, relative to the config's directory |
//! | `scatterer` | inline `r theta alpha f_shift`; repeatable |
//! | `noise_rms`, `seed` | channel noise [0, 1] |
//! | `thetas` | explicit angle list (rad) |
//! | `theta_min`, `theta_max`, `theta_count` | uniform angle grid [-0.3, 0.3, 31] |
//! | `methods` | subset of `pre, post, focus` [pre, post, focus] |
//! | `nq` | weight window lengths [3, 9, 15, 21, 29] |
//! | `truncation` | `symmetric` or `N1:N2` (single asymmetric window) [symmetric] |
//! | `band_threshold_db` | band selection threshold [40] |
//! | `oversampling` | `P` values for the complexity table [4, 10] |
//! | `complexity_k` | fixed `K` for the complexity table [measured per `N_q`] |
//! | `complexity_nh` | fixed `N_h` for the complexity table [`round(D P)`] |
//! | `log_base` | `2` or `e` [2] |
//! | `psf_depths_mm` | depths for PSF rows [scatterer ranges] |
//! | `dynamic_range_db`, `pixel_pitch_mm`, `interpolation` | image [60, 0.2, bilinear] |
//! | `lut_cache` | weight table directory, relative to the output dir [luts] |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fdbf::DEFAULT_BAND_THRESHOLD_DB;
use crate::imaging::{Interpolation, DEFAULT_DYNAMIC_RANGE_DB};
use crate::metrics::LogBase;
use crate::scene::{parse_scatterer, Phantom, Scatterer, DEFAULT_SOUND_SPEED};
use crate::tdbf::LineTag;
use crate::waveform::Window;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truncation {
    Symmetric,
    Asymmetric { n1: usize, n2: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub f0: f64,
    pub bandwidth: f64,
    pub pulse_duration: f64,
    pub window: Window,
    pub fs: f64,
    pub fc: f64,
    pub acquisition: f64,
    pub elements: usize,
    pub pitch: f64,
    pub sound_speed: f64,
    pub phantom: Phantom,
    pub noise_rms: f64,
    pub seed: u64,
    pub thetas: Vec<f64>,
    pub methods: Vec<LineTag>,
    pub nq: Vec<usize>,
    pub truncation: Truncation,
    pub band_threshold_db: f64,
    pub oversampling: Vec<f64>,
    pub complexity_k: Option<usize>,
    pub complexity_nh: Option<usize>,
    pub log_base: LogBase,
    pub psf_depths_mm: Vec<f64>,
    pub dynamic_range_db: f64,
    pub pixel_pitch_mm: f64,
    pub interpolation: Interpolation,
    pub lut_cache: PathBuf,
    /// SHA-256 of the config text and any phantom file.
    pub hash: String,
}

impl ExperimentConfig {
    pub fn time_bandwidth(&self) -> f64 {
        self.pulse_duration * self.bandwidth
    }

    /// `(N1, N2)` windows to evaluate.
    pub fn windows(&self) -> Vec<(usize, usize)> {
        match self.truncation {
            Truncation::Symmetric => self.nq.iter().map(|&n| ((n - 1) / 2, (n - 1) / 2)).collect(),
            Truncation::Asymmetric { n1, n2 } => vec![(n1, n2)],
        }
    }

    pub fn from_file(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses config text; `base` resolves a relative `phantom_file`.
    pub fn parse(text: &str, base: &Path) -> Result<ExperimentConfig> {
        let mut values: BTreeMap<String, (usize, String)> = BTreeMap::new();
        let mut inline = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: line_no,
                msg: format!("expected `key = value`, got {line:?}"),
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::Config {
                    line: line_no,
                    msg: format!("unknown key {key:?}"),
                });
            }
            if key == "scatterer" {
                let s = parse_scatterer(&value).map_err(|msg| Error::Config { line: line_no, msg })?;
                inline.push(s);
                continue;
            }
            if values.insert(key.clone(), (line_no, value)).is_some() {
                return Err(Error::Config {
                    line: line_no,
                    msg: format!("duplicate key {key:?}"),
                });
            }
        }
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        let v = Values { map: values };

        let f0 = v.f64_or("f0", 3e6)?;
        let bandwidth = v.f64_or("bandwidth", 0.6 * f0)?;
        let d = v.f64_or("time_bandwidth", 60.0)?;
        let pulse_duration = match v.get("pulse_duration") {
            Some(_) => v.f64_or("pulse_duration", 0.0)?,
            None => d / bandwidth,
        };
        let window = match v.get("window") {
            Some((line, s)) => Window::parse(s).ok_or_else(|| Error::Config {
                line,
                msg: format!("unknown window {s:?}"),
            })?,
            None => Window::default(),
        };
        let fc = v.f64_or("fc", 2.9e6)?;
        let fs = v.f64_or("fs", 4.0 * fc)?;

        let mut scatterers: Vec<Scatterer> = Vec::new();
        if let Some((line, file)) = v.get("phantom_file") {
            let path = base.join(file);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::Config {
                line,
                msg: format!("cannot read phantom file {}: {e}", path.display()),
            })?;
            hasher.update(text.as_bytes());
            let ph = Phantom::parse(&text).map_err(|(l, msg)| Error::Config {
                line,
                msg: format!("{} line {l}: {msg}", path.display()),
            })?;
            scatterers.extend(ph.scatterers);
        }
        scatterers.extend(inline);

        let thetas = match v.get("thetas") {
            Some(_) => v.f64_list("thetas")?,
            None => {
                let lo = v.f64_or("theta_min", -0.3)?;
                let hi = v.f64_or("theta_max", 0.3)?;
                let n = v.usize_or("theta_count", 31)?;
                match n {
                    0 => Vec::new(),
                    1 => vec![0.5 * (lo + hi)],
                    _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
                }
            }
        };
        let methods = match v.get("methods") {
            Some((line, s)) => split_list(s)
                .map(|m| match m {
                    "pre" => Ok(LineTag::PreCompression),
                    "post" => Ok(LineTag::PostCompression),
                    "focus" => Ok(LineTag::Focus),
                    other => Err(Error::Config {
                        line,
                        msg: format!("unknown method {other:?}"),
                    }),
                })
                .collect::<Result<Vec<_>>>()?,
            None => vec![LineTag::PreCompression, LineTag::PostCompression, LineTag::Focus],
        };
        let truncation = match v.get("truncation") {
            None => Truncation::Symmetric,
            Some((_, s)) if s == "symmetric" => Truncation::Symmetric,
            Some((line, s)) => {
                let bad = || Error::Config {
                    line,
                    msg: format!("truncation must be `symmetric` or `N1:N2`, got {s:?}"),
                };
                let (a, b) = s.split_once(':').ok_or_else(bad)?;
                Truncation::Asymmetric {
                    n1: a.trim().parse().map_err(|_| bad())?,
                    n2: b.trim().parse().map_err(|_| bad())?,
                }
            }
        };
        let nq = match v.get("nq") {
            Some(_) => v.usize_list("nq")?,
            None => vec![3, 9, 15, 21, 29],
        };
        if truncation == Truncation::Symmetric {
            if let Some(&bad) = nq.iter().find(|&&n| n % 2 == 0) {
                return Err(Error::Config {
                    line: v.get("nq").map(|x| x.0).unwrap_or(0),
                    msg: format!("symmetric truncation needs odd N_q values (got {bad})"),
                });
            }
        }
        let log_base = match v.get("log_base") {
            Some((line, s)) => LogBase::parse(s).ok_or_else(|| Error::Config {
                line,
                msg: format!("log_base must be 2 or e, got {s:?}"),
            })?,
            None => LogBase::Two,
        };
        let interpolation = match v.get("interpolation").map(|x| x.1) {
            None | Some("bilinear") => Interpolation::Bilinear,
            Some("nearest") => Interpolation::Nearest,
            Some(other) => {
                return Err(Error::Config {
                    line: v.get("interpolation").unwrap().0,
                    msg: format!("interpolation must be bilinear or nearest, got {other:?}"),
                })
            }
        };
        let psf_depths_mm = match v.get("psf_depths_mm") {
            Some(_) => v.f64_list("psf_depths_mm")?,
            None => scatterers.iter().map(|s| s.range * 1e3).collect(),
        };

        let cfg = ExperimentConfig {
            f0,
            bandwidth,
            pulse_duration,
            window,
            fs,
            fc,
            acquisition: v.f64_or("acquisition", 120e-6)?,
            elements: v.usize_or("elements", 64)?,
            pitch: v.f64_or("pitch", 3e-4)?,
            sound_speed: v.f64_or("sound_speed", DEFAULT_SOUND_SPEED)?,
            phantom: Phantom::new(scatterers),
            noise_rms: v.f64_or("noise_rms", 0.0)?,
            seed: v.usize_or("seed", 1)? as u64,
            thetas,
            methods,
            nq,
            truncation,
            band_threshold_db: v.f64_or("band_threshold_db", DEFAULT_BAND_THRESHOLD_DB)?,
            oversampling: match v.get("oversampling") {
                Some(_) => v.f64_list("oversampling")?,
                None => vec![4.0, 10.0],
            },
            complexity_k: match v.get("complexity_k") {
                Some(_) => Some(v.usize_or("complexity_k", 0)?),
                None => None,
            },
            complexity_nh: match v.get("complexity_nh") {
                Some(_) => Some(v.usize_or("complexity_nh", 0)?),
                None => None,
            },
            log_base,
            psf_depths_mm,
            dynamic_range_db: v.f64_or("dynamic_range_db", DEFAULT_DYNAMIC_RANGE_DB)?,
            pixel_pitch_mm: v.f64_or("pixel_pitch_mm", 0.2)?,
            interpolation,
            lut_cache: PathBuf::from(v.get("lut_cache").map(|x| x.1).unwrap_or("luts")),
            hash: hex::encode(hasher.finalize()),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config {
                    line: 0,
                    msg: msg.to_string(),
                })
            }
        };
        check(self.f0 > 0.0 && self.bandwidth > 0.0 && self.pulse_duration > 0.0, "pulse parameters must be > 0")?;
        check(self.fs > 0.0 && self.fc > 0.0 && self.acquisition > 0.0, "fs, fc and acquisition must be > 0")?;
        check(self.elements >= 1 && self.pitch > 0.0 && self.sound_speed > 0.0, "array parameters must be positive")?;
        check(self.nq.iter().all(|&n| n >= 1), "N_q values must be >= 1")?;
        check(self.thetas.windows(2).all(|w| w[1] > w[0]), "angles must be strictly increasing")?;
        check(self.thetas.iter().all(|t| t.abs() < std::f64::consts::FRAC_PI_2), "angles must satisfy |theta| < pi/2")?;
        check(self.oversampling.iter().all(|&p| p > 0.0), "oversampling factors must be > 0")?;
        check(self.dynamic_range_db > 0.0 && self.pixel_pitch_mm > 0.0, "image parameters must be > 0")?;
        check(self.noise_rms >= 0.0, "noise_rms must be >= 0")?;
        Ok(())
    }
}

const KNOWN_KEYS: &[&str] = &[
    "f0",
    "bandwidth",
    "time_bandwidth",
    "pulse_duration",
    "window",
    "fs",
    "fc",
    "acquisition",
    "elements",
    "pitch",
    "sound_speed",
    "phantom_file",
    "scatterer",
    "noise_rms",
    "seed",
    "thetas",
    "theta_min",
    "theta_max",
    "theta_count",
    "methods",
    "nq",
    "truncation",
    "band_threshold_db",
    "oversampling",
    "complexity_k",
    "complexity_nh",
    "log_base",
    "psf_depths_mm",
    "dynamic_range_db",
    "pixel_pitch_mm",
    "interpolation",
    "lut_cache",
];

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty())
}

struct Values {
    map: BTreeMap<String, (usize, String)>,
}

impl Values {
    fn get(&self, key: &str) -> Option<(usize, &str)> {
        self.map.get(key).map(|(l, v)| (*l, v.as_str()))
    }

    fn parse_one<T: std::str::FromStr>(&self, key: &str, line: usize, s: &str) -> Result<T> {
        s.parse().map_err(|_| Error::Config {
            line,
            msg: format!("{key}: cannot parse {s:?}"),
        })
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            Some((line, s)) => self.parse_one(key, line, s),
            None => Ok(default),
        }
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            Some((line, s)) => self.parse_one(key, line, s),
            None => Ok(default),
        }
    }

    fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        let (line, s) = self.get(key).unwrap_or((0, ""));
        split_list(s).map(|x| self.parse_one(key, line, x)).collect()
    }

    fn usize_list(&self, key: &str) -> Result<Vec<usize>> {
        let (line, s) = self.get(key).unwrap_or((0, ""));
        split_list(s).map(|x| self.parse_one(key, line, x)).collect()
    }
}
