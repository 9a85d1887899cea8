//! Layered key = value configuration: built-in preset defaults, then the
//! config file, then command-line overrides. Unknown keys are a hard
//! error.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use qudit_qnd::{
    AncillaModel, ChargeState, InitPolicy, PhysicalParams, ProbeOrder, ProtocolConfig,
    ProtocolKind, QndError, QuadrupoleTensor, Result, SpinQuantum,
};

pub const SHARED_KEYS: &[&str] = &[
    "preset",
    "seed",
    "output_dir",
    "format",
    "threads",
    "b0_tesla",
    "gamma_n_khz_per_t",
    "gamma_e_khz_per_t",
    "a_khz",
    "theta_deg",
    "dimension",
    "qxx_khz",
    "qyy_khz",
    "qyz_khz",
    "qxz_khz",
    "qxy_khz",
    "kappa",
    "in_out_order",
];

/// Composition order of one tunnel cycle. The device sequence is
/// couple-then-decouple; systems whose reinitialization order is unknown
/// can flip it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InOutOrder {
    DecoupleAfterCouple,
    CoupleAfterDecouple,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
    Both,
}

impl OutputFormat {
    pub fn writes_csv(self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }

    pub fn writes_json(self) -> bool {
        matches!(self, OutputFormat::Json | OutputFormat::Both)
    }
}

/// String key-value store with the merged configuration.
#[derive(Debug, Clone)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

fn config_err(msg: impl Into<String>) -> QndError {
    QndError::InvalidConfig(msg.into())
}

impl Settings {
    /// Merge defaults, preset values, the optional config file and
    /// command-line overrides; reject keys outside `allowed`.
    pub fn resolve(
        allowed: &[&str],
        config_path: Option<&Path>,
        overrides: &[(String, String)],
    ) -> Result<Self> {
        let allowed_set: BTreeSet<&str> = allowed.iter().copied().collect();

        let mut file_pairs: Vec<(String, String)> = Vec::new();
        if let Some(path) = config_path {
            let text = std::fs::read_to_string(path)?;
            for (lineno, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    config_err(format!(
                        "{}:{}: expected key = value, got {raw:?}",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                file_pairs.push((key.trim().to_string(), value.trim().to_string()));
            }
        }

        // preset may come from the file or the flags; flags win
        let mut preset = "sb123".to_string();
        for (k, v) in file_pairs.iter().chain(overrides.iter()) {
            if k == "preset" {
                preset = v.clone();
            }
        }

        let mut values = preset_defaults(&preset)?;
        values.insert("preset".into(), preset);
        for (k, v) in file_pairs.into_iter().chain(overrides.iter().cloned()) {
            if !allowed_set.contains(k.as_str()) {
                let mut known: Vec<&str> = allowed_set.iter().copied().collect();
                known.sort_unstable();
                return Err(config_err(format!(
                    "unknown configuration key {k:?}; known keys: {}",
                    known.join(", ")
                )));
            }
            values.insert(k, v);
        }

        Ok(Self { values })
    }

    pub fn echo(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn str_value(&self, key: &str) -> Result<&str> {
        self.raw(key)
            .ok_or_else(|| config_err(format!("missing required key {key:?}")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.str_value(key)?;
        raw.parse::<T>()
            .map_err(|_| config_err(format!("key {key:?}: cannot parse {raw:?}")))
    }

    pub fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse::<T>()
                .map_err(|_| config_err(format!("key {key:?}: cannot parse {raw:?}"))),
        }
    }

    pub fn parse_opt<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| config_err(format!("key {key:?}: cannot parse {raw:?}"))),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse("seed")
    }

    pub fn output_dir(&self) -> Result<PathBuf> {
        Ok(PathBuf::from(self.str_value("output_dir")?))
    }

    pub fn format(&self) -> Result<OutputFormat> {
        match self.str_value("format")? {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            "both" => Ok(OutputFormat::Both),
            other => Err(config_err(format!(
                "format must be csv, json or both, got {other:?}"
            ))),
        }
    }

    pub fn threads(&self) -> Result<Option<usize>> {
        self.parse_opt("threads")
    }

    pub fn spin_quantum(&self) -> Result<SpinQuantum> {
        SpinQuantum::new(self.parse("dimension")?)
    }

    /// Physical parameters at the first (or only) configured field value.
    pub fn physical_params(&self) -> Result<PhysicalParams> {
        let b0 = *self
            .b0_list()?
            .first()
            .ok_or_else(|| config_err("b0_tesla must hold at least one value"))?;
        Ok(PhysicalParams {
            b0_tesla: b0,
            gamma_n_khz_per_t: self.parse("gamma_n_khz_per_t")?,
            gamma_e_khz_per_t: self.parse("gamma_e_khz_per_t")?,
            a_khz: self.parse("a_khz")?,
            theta_rad: self.parse::<f64>("theta_deg")?.to_radians(),
        })
    }

    /// Comma-separated field list, e.g. "0.3,1.0".
    pub fn b0_list(&self) -> Result<Vec<f64>> {
        parse_number_list(self.str_value("b0_tesla")?)
            .map_err(|e| config_err(format!("key \"b0_tesla\": {e}")))
    }

    pub fn quadrupole(&self) -> Result<QuadrupoleTensor> {
        Ok(QuadrupoleTensor::new(
            self.parse("qxx_khz")?,
            self.parse("qyy_khz")?,
            self.parse("qyz_khz")?,
            self.parse("qxz_khz")?,
            self.parse("qxy_khz")?,
        ))
    }

    pub fn kappa(&self) -> Result<f64> {
        self.parse("kappa")
    }

    pub fn in_out_order(&self) -> Result<InOutOrder> {
        match self.raw("in_out_order") {
            None | Some("couple_decouple") => Ok(InOutOrder::DecoupleAfterCouple),
            Some("decouple_couple") => Ok(InOutOrder::CoupleAfterDecouple),
            Some(other) => Err(config_err(format!(
                "in_out_order must be couple_decouple or decouple_couple, got {other:?}"
            ))),
        }
    }

    pub fn ancilla(&self) -> Result<AncillaModel> {
        AncillaModel::new(
            self.parse_or("p_tp", 0.968)?,
            self.parse_or("p_fp", 0.019)?,
            self.parse_or("fp_tunnel_prob", 0.0)?,
        )
    }

    pub fn protocol_kinds(&self) -> Result<Vec<ProtocolKind>> {
        match self.parse_or::<String>("protocol", "both".into())?.as_str() {
            "rr" => Ok(vec![ProtocolKind::Rr]),
            "ar" => Ok(vec![ProtocolKind::Ar]),
            "both" => Ok(vec![ProtocolKind::Rr, ProtocolKind::Ar]),
            other => Err(config_err(format!(
                "protocol must be rr, ar or both, got {other:?}"
            ))),
        }
    }

    pub fn protocol_config(&self, kind: ProtocolKind, n_shots: usize) -> Result<ProtocolConfig> {
        let mut cfg = match kind {
            ProtocolKind::Rr => ProtocolConfig::rr(n_shots),
            ProtocolKind::Ar => ProtocolConfig::ar(n_shots),
        };
        cfg.threshold = self.parse_opt("threshold")?;
        cfg.kappa = self.kappa()?;
        cfg.max_restarts = self.parse_or("max_restarts", 10)?;
        cfg.init_policy = match self.raw("init_policy") {
            None => None,
            Some("per_cycle") => Some(InitPolicy::PerCycle),
            Some("on_demand") => Some(InitPolicy::OnDemand),
            Some(other) => {
                return Err(config_err(format!(
                    "init_policy must be per_cycle or on_demand, got {other:?}"
                )))
            }
        };
        cfg.probe_order = match self.raw("probe_order") {
            None | Some("continue") => ProbeOrder::ContinueAcrossRestarts,
            Some("reset") => ProbeOrder::ResetEachAttempt,
            Some(other) => {
                return Err(config_err(format!(
                    "probe_order must be continue or reset, got {other:?}"
                )))
            }
        };
        Ok(cfg)
    }

    pub fn charge_state(&self) -> Result<ChargeState> {
        match self
            .parse_or::<String>("charge_state", "ionized".into())?
            .as_str()
        {
            "ionized" => Ok(ChargeState::Ionized),
            "neutral" => Ok(ChargeState::Neutral),
            other => Err(config_err(format!(
                "charge_state must be ionized or neutral, got {other:?}"
            ))),
        }
    }

    /// Shot counts: a single value "3" or an inclusive range "1..10".
    pub fn shots_list(&self, default: &str) -> Result<Vec<usize>> {
        let raw = self.raw("n_shots").unwrap_or(default);
        if let Some((lo, hi)) = raw.split_once("..") {
            let lo: usize = lo
                .trim()
                .parse()
                .map_err(|_| config_err(format!("bad n_shots range start {lo:?}")))?;
            let hi: usize = hi
                .trim()
                .parse()
                .map_err(|_| config_err(format!("bad n_shots range end {hi:?}")))?;
            if lo == 0 || hi < lo {
                return Err(config_err(format!("bad n_shots range {raw:?}")));
            }
            Ok((lo..=hi).collect())
        } else {
            let single: usize = raw
                .parse()
                .map_err(|_| config_err(format!("bad n_shots {raw:?}")))?;
            Ok(vec![single])
        }
    }

    /// Ancilla fidelity grid: comma list or "lo..hi:count".
    pub fn ancilla_grid(&self) -> Result<Option<Vec<f64>>> {
        match self.raw("ancilla_grid") {
            None => Ok(None),
            Some(raw) => parse_grid(raw)
                .map(Some)
                .map_err(|e| config_err(format!("key \"ancilla_grid\": {e}"))),
        }
    }

    /// Angle list in degrees: comma list or "lo..hi:count".
    pub fn angles_deg(&self, default: &str) -> Result<Vec<f64>> {
        let raw = self.raw("angles_deg").unwrap_or(default);
        parse_grid(raw).map_err(|e| config_err(format!("key \"angles_deg\": {e}")))
    }
}

fn preset_defaults(preset: &str) -> Result<BTreeMap<String, String>> {
    let (p, q, dimension) = match preset {
        "sb123" => (PhysicalParams::sb123(), QuadrupoleTensor::sb123(), 8usize),
        "ge73" => (
            PhysicalParams::ge73(1.0),
            QuadrupoleTensor::ge73_placeholder(),
            10usize,
        ),
        other => {
            return Err(config_err(format!(
                "unknown preset {other:?}; available: sb123, ge73"
            )))
        }
    };
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        m.insert(k.to_string(), v);
    };
    put("seed", "20250810".into());
    put("output_dir", "qnd-out".into());
    put("format", "both".into());
    put("b0_tesla", p.b0_tesla.to_string());
    put("gamma_n_khz_per_t", p.gamma_n_khz_per_t.to_string());
    put("gamma_e_khz_per_t", p.gamma_e_khz_per_t.to_string());
    put("a_khz", p.a_khz.to_string());
    put("theta_deg", "0".into());
    put("dimension", dimension.to_string());
    put("qxx_khz", q.qxx_khz.to_string());
    put("qyy_khz", q.qyy_khz.to_string());
    put("qyz_khz", q.qyz_khz.to_string());
    put("qxz_khz", q.qxz_khz.to_string());
    put("qxy_khz", q.qxy_khz.to_string());
    put("kappa", qudit_qnd::DEFAULT_KAPPA.to_string());
    Ok(m)
}

fn parse_number_list(raw: &str) -> std::result::Result<Vec<f64>, String> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| format!("cannot parse {s:?}"))
        })
        .collect()
}

/// "a,b,c" or "lo..hi:count" (inclusive linspace).
fn parse_grid(raw: &str) -> std::result::Result<Vec<f64>, String> {
    if let Some((range, count)) = raw.split_once(':') {
        let (lo, hi) = range
            .split_once("..")
            .ok_or_else(|| format!("expected lo..hi:count, got {raw:?}"))?;
        let lo: f64 = lo.trim().parse().map_err(|_| format!("bad start {lo:?}"))?;
        let hi: f64 = hi.trim().parse().map_err(|_| format!("bad end {hi:?}"))?;
        let count: usize = count
            .trim()
            .parse()
            .map_err(|_| format!("bad count {count:?}"))?;
        if count < 2 {
            return Err("grid count must be at least 2".into());
        }
        let step = (hi - lo) / (count - 1) as f64;
        Ok((0..count).map(|k| lo + step * k as f64).collect())
    } else {
        parse_number_list(raw)
    }
}

/// Expand the `--q` shorthand into the five tensor keys.
pub fn expand_q_shorthand(value: &str) -> Result<Vec<(String, String)>> {
    let q = match value {
        "zero" | "0" => QuadrupoleTensor::zero(),
        "sb123" => QuadrupoleTensor::sb123(),
        "ge73-placeholder" => QuadrupoleTensor::ge73_placeholder(),
        list => {
            let vals = parse_number_list(list).map_err(|e| config_err(format!("--q: {e}")))?;
            if vals.len() != 5 {
                return Err(config_err(
                    "--q expects zero, sb123, ge73-placeholder or 5 comma-separated values \
                     (qxx,qyy,qyz,qxz,qxy)",
                ));
            }
            QuadrupoleTensor::new(vals[0], vals[1], vals[2], vals[3], vals[4])
        }
    };
    Ok(vec![
        ("qxx_khz".into(), q.qxx_khz.to_string()),
        ("qyy_khz".into(), q.qyy_khz.to_string()),
        ("qyz_khz".into(), q.qyz_khz.to_string()),
        ("qxz_khz".into(), q.qxz_khz.to_string()),
        ("qxy_khz".into(), q.qxy_khz.to_string()),
    ])
}
