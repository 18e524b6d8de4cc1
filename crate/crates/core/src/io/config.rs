//! `Keyword= value` run configuration.
//!
//! Lines are `Key= value`; `#` starts a comment anywhere on a line. Unknown
//! keys produce warnings, a non-blank line without `=` is a parse error,
//! and a missing physics key is refused rather than left undefined.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flavor::Species;
use crate::geometry::Model;
use crate::matter::{MatterParams, Profile};
use crate::spectra::SpectrumParams;

/// Keys without which a run cannot start.
const REQUIRED: &[&str] = &[
    "hasMatter",
    "Tn",
    "Ts",
    "eps0",
    "kappa",
    "dm2",
    "theta",
    "R0",
    "Rn",
    "dr",
    "max_dr",
    "E0",
    "E1",
    "Abins",
    "Pbins",
    "Ebins",
    "Flvs",
    "Rv",
    "L_ve",
    "L_vbe",
    "L_vx",
    "L_vbx",
    "eta_ve",
    "eta_vbe",
    "eta_vx",
    "eta_vbx",
];

/// Keys additionally required when `hasMatter` is nonzero.
const REQUIRED_MATTER: &[&str] = &["Ye", "nb0", "Mns", "gs", "S", "hNS"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dump_mode: u32,
    pub file_prefix: String,
    pub new_file_step: u64,
    pub sync_step: u64,
    /// Dump gates per mode (index 0 for mode 1, 1 for mode 2): km, s, iterations.
    pub r_step: [f64; 2],
    pub t_step: [f64; 2],
    pub itr_step: [u64; 2],
    pub start_beam: Option<i64>,
    pub end_beam: Option<i64>,
    pub multi_node_bench: bool,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub designated_writer: bool,

    pub has_matter: bool,
    /// Wall-clock limit of the evolution loop in seconds; 0 disables.
    pub tn: f64,
    /// Iteration limit; 0 disables.
    pub ts: u64,

    pub eps0: f64,
    pub kappa: f64,
    pub dm2: f64,
    pub theta: f64,
    pub r0: f64,
    pub rn: f64,
    pub dr: f64,
    pub max_dr: f64,
    pub min_dr: f64,
    pub e0: f64,
    pub e1: f64,
    pub abins: usize,
    pub pbins: usize,
    pub ebins: usize,
    pub spoints: usize,
    pub flvs: usize,
    pub ye: f64,
    pub nb0: f64,
    pub rv: f64,
    pub mns: f64,
    pub gs: f64,
    pub entropy: f64,
    pub h_ns: f64,
    /// Per species in [`Species::ALL`] order.
    pub luminosity: [f64; 4],
    pub temperature: [Option<f64>; 4],
    pub mean_energy: [Option<f64>; 4],
    pub eta: [f64; 4],

    pub model: Model,
    pub profile: Profile,
    pub coupling_scale: f64,
    pub azimuth_perturb: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dump_mode: 0,
            file_prefix: "oscflat".into(),
            new_file_step: 0,
            sync_step: 0,
            r_step: [0.0; 2],
            t_step: [0.0; 2],
            itr_step: [0; 2],
            start_beam: None,
            end_beam: None,
            multi_node_bench: false,
            min_nodes: 1,
            max_nodes: 1,
            designated_writer: false,
            has_matter: false,
            tn: 0.0,
            ts: 0,
            eps0: 1e-6,
            kappa: 0.9,
            dm2: 3e-3,
            theta: 0.1,
            r0: 50.0,
            rn: 250.0,
            dr: 0.1,
            max_dr: 1.0,
            min_dr: 1e-9,
            e0: 0.0,
            e1: 80.0,
            abins: 1,
            pbins: 1,
            ebins: 16,
            spoints: 1,
            flvs: 2,
            ye: 0.4,
            nb0: 1.63e36,
            rv: 10.0,
            mns: 1.4,
            gs: 11.0 / 2.0,
            entropy: 100.0,
            h_ns: 0.18,
            luminosity: [1e51; 4],
            temperature: [None; 4],
            mean_energy: [Some(11.0), Some(16.0), Some(25.0), Some(25.0)],
            eta: [3.0; 4],
            model: Model::Bulb,
            profile: Profile::Sum,
            coupling_scale: 1.0,
            azimuth_perturb: 0.0,
        }
    }
}

/// Result of parsing a config text.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedConfig {
    pub config: RunConfig,
    pub warnings: Vec<String>,
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value.parse::<T>().map_err(|_| Error::Parse {
        line,
        msg: format!("{key}: cannot parse {value:?}"),
    })
}

fn parse_flag(key: &str, value: &str, line: usize) -> Result<bool> {
    Ok(parse_num::<f64>(key, value, line)? != 0.0)
}

fn species_key(key: &str, prefix: &str) -> Option<usize> {
    let suffix = key.strip_prefix(prefix)?;
    Species::ALL
        .iter()
        .position(|s| s.config_suffix() == suffix)
}

/// Strip the comment and split a line into `(key, value)`.
fn split_line(raw: &str, line: usize) -> Result<Option<(&str, &str)>> {
    let text = raw.split('#').next().unwrap_or("").trim();
    if text.is_empty() {
        return Ok(None);
    }
    let (key, value) = text.split_once('=').ok_or_else(|| Error::Parse {
        line,
        msg: format!("expected `Keyword= value`, found {text:?}"),
    })?;
    let key = key.trim();
    if key.is_empty() || key.contains(char::is_whitespace) {
        return Err(Error::Parse {
            line,
            msg: format!("malformed keyword {key:?}"),
        });
    }
    Ok(Some((key, value.trim())))
}

impl RunConfig {
    /// Assign one key. Returns false for unknown keys.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<bool> {
        if value.is_empty() {
            return Err(Error::Parse {
                line,
                msg: format!("{key}: missing value"),
            });
        }
        let f = |v: &str| parse_num::<f64>(key, v, line);
        let u = |v: &str| parse_num::<u64>(key, v, line);
        let z = |v: &str| parse_num::<usize>(key, v, line);
        match key {
            "dumpMode" => self.dump_mode = parse_num(key, value, line)?,
            "filePrefix" => self.file_prefix = value.to_string(),
            "newFile_step" => self.new_file_step = u(value)?,
            "sync_step" => self.sync_step = u(value)?,
            "r_step1" => self.r_step[0] = f(value)?,
            "r_step2" => self.r_step[1] = f(value)?,
            "t_step1" => self.t_step[0] = f(value)?,
            "t_step2" => self.t_step[1] = f(value)?,
            "itr_step1" => self.itr_step[0] = u(value)?,
            "itr_step2" => self.itr_step[1] = u(value)?,
            "start_beam" => self.start_beam = Some(parse_num(key, value, line)?),
            "end_beam" => self.end_beam = Some(parse_num(key, value, line)?),
            "multiNodeBench" => self.multi_node_bench = parse_flag(key, value, line)?,
            "minNodes" => self.min_nodes = z(value)?,
            "maxNodes" => self.max_nodes = z(value)?,
            "designatedWriter" => self.designated_writer = parse_flag(key, value, line)?,
            "hasMatter" => self.has_matter = parse_flag(key, value, line)?,
            "Tn" => self.tn = f(value)?,
            "Ts" => self.ts = u(value)?,
            "eps0" => self.eps0 = f(value)?,
            "kappa" => self.kappa = f(value)?,
            "dm2" => self.dm2 = f(value)?,
            "theta" => self.theta = f(value)?,
            "R0" => self.r0 = f(value)?,
            "Rn" => self.rn = f(value)?,
            "dr" => self.dr = f(value)?,
            "max_dr" => self.max_dr = f(value)?,
            "min_dr" => self.min_dr = f(value)?,
            "E0" => self.e0 = f(value)?,
            "E1" => self.e1 = f(value)?,
            "Abins" => self.abins = z(value)?,
            "Pbins" => self.pbins = z(value)?,
            "Ebins" => self.ebins = z(value)?,
            "SPoints" => self.spoints = z(value)?,
            "Flvs" => self.flvs = z(value)?,
            "Ye" => self.ye = f(value)?,
            "nb0" => self.nb0 = f(value)?,
            "Rv" => self.rv = f(value)?,
            "Mns" => self.mns = f(value)?,
            "gs" => self.gs = f(value)?,
            "S" => self.entropy = f(value)?,
            "hNS" => self.h_ns = f(value)?,
            "model" => {
                self.model = Model::from_name(value).ok_or_else(|| Error::Parse {
                    line,
                    msg: format!("model: unknown value {value:?}"),
                })?
            }
            "profile" => {
                self.profile = Profile::from_name(value).ok_or_else(|| Error::Parse {
                    line,
                    msg: format!("profile: unknown value {value:?}"),
                })?
            }
            "coupling_scale" => self.coupling_scale = f(value)?,
            "azimuth_perturb" => self.azimuth_perturb = f(value)?,
            _ => {
                if let Some(s) = species_key(key, "L_") {
                    self.luminosity[s] = f(value)?;
                } else if let Some(s) = species_key(key, "T_") {
                    self.temperature[s] = Some(f(value)?);
                } else if let Some(s) = species_key(key, "Emean_") {
                    self.mean_energy[s] = Some(f(value)?);
                } else if let Some(s) = species_key(key, "eta_") {
                    self.eta[s] = f(value)?;
                } else {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// Check ranges and cross-key consistency.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.flvs != 2 {
            return bad(format!(
                "Flvs = {} is not supported; only two flavors are implemented",
                self.flvs
            ));
        }
        if self.spoints != 1 {
            return bad(format!(
                "SPoints = {} is not supported; only a single emission surface",
                self.spoints
            ));
        }
        if !(self.r0 <= self.rn) {
            return bad(format!("R0 = {} must not exceed Rn = {}", self.r0, self.rn));
        }
        if !(self.rv > 0.0 && self.rv <= self.r0) {
            return bad(format!(
                "Rv = {} must be positive and not exceed R0 = {}",
                self.rv, self.r0
            ));
        }
        if !(self.e0 >= 0.0 && self.e0 < self.e1) {
            return bad(format!(
                "need 0 <= E0 < E1, got E0 = {}, E1 = {}",
                self.e0, self.e1
            ));
        }
        if self.abins == 0 || self.pbins == 0 || self.ebins == 0 {
            return bad("Abins, Pbins and Ebins must all be >= 1".into());
        }
        if !(self.eps0 > 0.0) {
            return bad(format!("eps0 must be positive, got {}", self.eps0));
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return bad(format!("kappa must lie in (0, 1], got {}", self.kappa));
        }
        if !(self.dr > 0.0 && self.max_dr > 0.0 && self.min_dr > 0.0 && self.min_dr <= self.max_dr)
        {
            return bad(format!(
                "step sizes need 0 < min_dr <= max_dr and dr > 0 (dr = {}, min_dr = {}, max_dr = {})",
                self.dr, self.min_dr, self.max_dr
            ));
        }
        if !(self.coupling_scale >= 0.0) {
            return bad(format!(
                "coupling_scale must be >= 0, got {}",
                self.coupling_scale
            ));
        }
        match self.model {
            Model::SingleAngle if self.abins != 1 || self.pbins != 1 => {
                return bad("the single-angle model needs Abins = 1 and Pbins = 1".into())
            }
            Model::Bulb if self.pbins != 1 => return bad("the bulb model needs Pbins = 1".into()),
            _ => {}
        }
        if self.has_matter
            && self.profile != Profile::Off
            && !(self.ye >= 0.0
                && self.nb0 >= 0.0
                && self.h_ns > 0.0
                && self.mns > 0.0
                && self.entropy > 0.0)
        {
            return bad(
                "matter parameters must be positive (Ye, nb0 >= 0; hNS, Mns, S > 0)".into(),
            );
        }
        if self.min_nodes == 0 || self.max_nodes < self.min_nodes {
            return bad(format!(
                "node range [{}, {}] is empty",
                self.min_nodes, self.max_nodes
            ));
        }
        for s in Species::ALL {
            let i = s.index();
            if !(self.luminosity[i] >= 0.0) {
                return bad(format!("L_{} must be >= 0", s.config_suffix()));
            }
            match (self.temperature[i], self.mean_energy[i]) {
                (Some(_), Some(_)) => {
                    return bad(format!(
                        "give either T_{0} or Emean_{0}, not both",
                        s.config_suffix()
                    ))
                }
                (None, None) => {
                    return bad(format!(
                        "species {} needs T_{1} or Emean_{1}",
                        s.name(),
                        s.config_suffix()
                    ))
                }
                (Some(t), None) if !(t > 0.0) => {
                    return bad(format!("T_{} must be positive", s.config_suffix()))
                }
                (None, Some(e)) if !(e > 0.0) => {
                    return bad(format!("Emean_{} must be positive", s.config_suffix()))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn spectrum_params(&self, s: Species) -> Result<SpectrumParams> {
        let i = s.index();
        match (self.temperature[i], self.mean_energy[i]) {
            (Some(t), _) => SpectrumParams::from_temperature(t, self.eta[i], self.luminosity[i]),
            (None, Some(e)) => SpectrumParams::from_mean_energy(e, self.eta[i], self.luminosity[i]),
            (None, None) => Err(Error::Uninitialized(vec![format!(
                "T_{}",
                s.config_suffix()
            )])),
        }
    }

    pub fn matter_params(&self) -> MatterParams {
        if !self.has_matter {
            return MatterParams::off(self.rv);
        }
        MatterParams {
            ye: self.ye,
            nb0: self.nb0,
            rnu: self.rv,
            h_ns: self.h_ns,
            mns: self.mns,
            gs: self.gs,
            entropy: self.entropy,
            profile: self.profile,
        }
    }

    /// Explicit beam bounds, if both are configured and non-negative.
    pub fn beam_bounds(&self) -> Option<(usize, usize)> {
        match (self.start_beam, self.end_beam) {
            (Some(s), Some(e)) if s >= 0 && e >= 0 => Some((s as usize, e as usize)),
            _ => None,
        }
    }

    /// Whether the bounds ask for a capability benchmark split.
    pub fn wants_capability_split(&self) -> bool {
        self.start_beam.is_some_and(|v| v < 0) || self.end_beam.is_some_and(|v| v < 0)
    }

    /// Canonical text form; parsing it reproduces `self` exactly.
    pub fn render(&self) -> String {
        let mut o = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(o, "{k}= {v}");
        };
        kv("dumpMode", self.dump_mode.to_string());
        kv("filePrefix", self.file_prefix.clone());
        kv("newFile_step", self.new_file_step.to_string());
        kv("sync_step", self.sync_step.to_string());
        for m in 0..2 {
            kv(&format!("r_step{}", m + 1), self.r_step[m].to_string());
            kv(&format!("t_step{}", m + 1), self.t_step[m].to_string());
            kv(&format!("itr_step{}", m + 1), self.itr_step[m].to_string());
        }
        if let Some(v) = self.start_beam {
            kv("start_beam", v.to_string());
        }
        if let Some(v) = self.end_beam {
            kv("end_beam", v.to_string());
        }
        kv("multiNodeBench", (self.multi_node_bench as u8).to_string());
        kv("minNodes", self.min_nodes.to_string());
        kv("maxNodes", self.max_nodes.to_string());
        kv(
            "designatedWriter",
            (self.designated_writer as u8).to_string(),
        );
        kv("hasMatter", (self.has_matter as u8).to_string());
        kv("Tn", self.tn.to_string());
        kv("Ts", self.ts.to_string());
        kv("eps0", self.eps0.to_string());
        kv("kappa", self.kappa.to_string());
        kv("dm2", self.dm2.to_string());
        kv("theta", self.theta.to_string());
        kv("R0", self.r0.to_string());
        kv("Rn", self.rn.to_string());
        kv("dr", self.dr.to_string());
        kv("max_dr", self.max_dr.to_string());
        kv("min_dr", self.min_dr.to_string());
        kv("E0", self.e0.to_string());
        kv("E1", self.e1.to_string());
        kv("Abins", self.abins.to_string());
        kv("Pbins", self.pbins.to_string());
        kv("Ebins", self.ebins.to_string());
        kv("SPoints", self.spoints.to_string());
        kv("Flvs", self.flvs.to_string());
        kv("Ye", self.ye.to_string());
        kv("nb0", self.nb0.to_string());
        kv("Rv", self.rv.to_string());
        kv("Mns", self.mns.to_string());
        kv("gs", self.gs.to_string());
        kv("S", self.entropy.to_string());
        kv("hNS", self.h_ns.to_string());
        for s in Species::ALL {
            let (i, x) = (s.index(), s.config_suffix());
            kv(&format!("L_{x}"), self.luminosity[i].to_string());
            if let Some(t) = self.temperature[i] {
                kv(&format!("T_{x}"), t.to_string());
            }
            if let Some(e) = self.mean_energy[i] {
                kv(&format!("Emean_{x}"), e.to_string());
            }
            kv(&format!("eta_{x}"), self.eta[i].to_string());
        }
        kv("model", self.model.name().into());
        kv("profile", self.profile.name().into());
        kv("coupling_scale", self.coupling_scale.to_string());
        kv("azimuth_perturb", self.azimuth_perturb.to_string());
        o
    }

    /// Hex SHA-256 of the canonical rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.render().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Apply `key=value` overrides, then re-validate.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for (i, o) in overrides.iter().enumerate() {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            if !self.set(k.trim(), v.trim(), i + 1)? {
                return Err(Error::Config(format!(
                    "override of unknown key {:?}",
                    k.trim()
                )));
            }
        }
        self.validate()
    }
}

/// Parse a config text without validating it.
pub fn parse_config_lenient(text: &str) -> Result<(ParsedConfig, BTreeSet<String>)> {
    let mut config = RunConfig::default();
    config.temperature = [None; 4];
    config.mean_energy = [None; 4];
    let mut warnings = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let Some((key, value)) = split_line(raw, line)? else {
            continue;
        };
        if config.set(key, value, line)? {
            if !seen.insert(key.to_string()) {
                warnings.push(format!(
                    "line {line}: {key} given more than once; the last value wins"
                ));
            }
        } else {
            warnings.push(format!("line {line}: unknown keyword {key:?} ignored"));
        }
    }
    if !seen.contains("model") && config.pbins > 1 {
        config.model = Model::ExtendedBulb;
    }
    Ok((ParsedConfig { config, warnings }, seen))
}

/// Parse and validate a config text.
pub fn parse_config(text: &str) -> Result<ParsedConfig> {
    let (parsed, seen) = parse_config_lenient(text)?;
    let mut missing: Vec<String> = REQUIRED
        .iter()
        .filter(|k| !seen.contains(**k))
        .map(|k| k.to_string())
        .collect();
    if parsed.config.has_matter && parsed.config.profile != Profile::Off {
        missing.extend(
            REQUIRED_MATTER
                .iter()
                .filter(|k| !seen.contains(**k))
                .map(|k| k.to_string()),
        );
    }
    for s in Species::ALL {
        let x = s.config_suffix();
        if !seen.contains(&format!("T_{x}")) && !seen.contains(&format!("Emean_{x}")) {
            missing.push(format!("T_{x}"));
        }
    }
    if !missing.is_empty() {
        return Err(Error::Uninitialized(missing));
    }
    parsed.config.validate()?;
    for w in &parsed.warnings {
        log::warn!("{w}");
    }
    Ok(parsed)
}

pub fn load_config(path: &Path) -> Result<ParsedConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}
