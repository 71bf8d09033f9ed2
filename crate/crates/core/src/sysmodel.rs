//! Scenario configuration, user placement, path loss, Rayleigh fading and SNR.
//!
//! Everything inside the library works in watts. Decibel quantities only
//! appear in the configuration file and in reports.

use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transmission direction. Uplink carries the offloaded task, downlink the
/// computed result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Up,
    Down,
}

impl Link {
    pub const BOTH: [Link; 2] = [Link::Up, Link::Down];
}

pub fn dbm_to_w(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn w_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// Static scenario parameters.
///
/// Slot indices used by the rest of the crate are zero-based; `tau` and the
/// deadlines keep their frame-level meaning (counts of slots), so downlink
/// slot `n` (zero-based) occupies absolute slot `tau + n + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// Number of users `K`.
    pub users: usize,
    pub subcarriers_ul: usize,
    pub subcarriers_dl: usize,
    pub slots_ul: usize,
    pub slots_dl: usize,
    /// Downlink start offset in slots.
    pub tau: usize,
    pub subcarrier_bandwidth_hz: f64,
    pub noise_psd_dbm_hz: f64,
    pub bs_power_max_w: f64,
    pub user_power_max_w: Vec<f64>,
    pub task_bits: Vec<f64>,
    /// Absolute deadline `D_k` in slots.
    pub deadlines: Vec<usize>,
    /// Ratio of result size to task size, `Gamma_k`.
    pub result_ratio: Vec<f64>,
    pub eps_ul: Vec<f64>,
    pub eps_dl: Vec<f64>,
    /// Uplink power weights `w_k >= 1`.
    pub weights: Vec<f64>,
    pub r_inner_m: f64,
    pub r_outer_m: f64,
    /// Penalty overrides in watts; `None` selects the defaults
    /// `10 K max_k P_k,max` and `10 P_max`.
    pub eta1_override_w: Option<f64>,
    pub eta2_override_w: Option<f64>,
}

impl SystemConfig {
    /// The reference scenario: 2M = 64 sub-carriers, four slots per link,
    /// tau = 3, 30 kHz sub-carriers, -174 dBm/Hz noise, 45 dBm base station
    /// and 23 dBm user budgets, unit weights and unit result ratio, no
    /// delay restriction and 1e-6 packet error probability.
    pub fn reference(users: usize) -> Self {
        let tau = 3;
        let slots = 4;
        SystemConfig {
            users,
            subcarriers_ul: 32,
            subcarriers_dl: 32,
            slots_ul: slots,
            slots_dl: slots,
            tau,
            subcarrier_bandwidth_hz: 30e3,
            noise_psd_dbm_hz: -174.0,
            bs_power_max_w: dbm_to_w(45.0),
            user_power_max_w: vec![dbm_to_w(23.0); users],
            task_bits: vec![160.0; users],
            deadlines: vec![tau + slots; users],
            result_ratio: vec![1.0; users],
            eps_ul: vec![1e-6; users],
            eps_dl: vec![1e-6; users],
            weights: vec![1.0; users],
            r_inner_m: 50.0,
            r_outer_m: 100.0,
            eta1_override_w: None,
            eta2_override_w: None,
        }
    }

    /// Same as [`SystemConfig::reference`] with `per_link` sub-carriers in
    /// each band.
    pub fn with_subcarriers(mut self, per_link: usize) -> Self {
        self.subcarriers_ul = per_link;
        self.subcarriers_dl = per_link;
        self
    }

    pub fn with_task_bits(mut self, bits: f64) -> Self {
        self.task_bits = vec![bits; self.users];
        self
    }

    pub fn with_error_prob(mut self, eps: f64) -> Self {
        self.eps_ul = vec![eps; self.users];
        self.eps_dl = vec![eps; self.users];
        self
    }

    pub fn with_deadlines(mut self, deadlines: Vec<usize>) -> Self {
        self.deadlines = deadlines;
        self
    }

    /// Number of slots in which the uplink and downlink frames overlap.
    pub fn overlap(&self) -> usize {
        self.slots_ul.saturating_sub(self.tau)
    }

    pub fn symbol_duration_s(&self) -> f64 {
        1.0 / self.subcarrier_bandwidth_hz
    }

    pub fn subcarriers(&self, link: Link) -> usize {
        match link {
            Link::Up => self.subcarriers_ul,
            Link::Down => self.subcarriers_dl,
        }
    }

    pub fn slots(&self, link: Link) -> usize {
        match link {
            Link::Up => self.slots_ul,
            Link::Down => self.slots_dl,
        }
    }

    /// Bits user `k` must deliver on `link`.
    pub fn demand_bits(&self, link: Link, k: usize) -> f64 {
        match link {
            Link::Up => self.task_bits[k],
            Link::Down => self.result_ratio[k] * self.task_bits[k],
        }
    }

    pub fn error_prob(&self, link: Link, k: usize) -> f64 {
        match link {
            Link::Up => self.eps_ul[k],
            Link::Down => self.eps_dl[k],
        }
    }

    /// Big-M cap for a power variable: the user budget in the uplink and the
    /// base-station budget in the downlink.
    pub fn power_cap_w(&self, link: Link, k: usize) -> f64 {
        match link {
            Link::Up => self.user_power_max_w[k],
            Link::Down => self.bs_power_max_w,
        }
    }

    pub fn eta1_w(&self) -> f64 {
        self.eta1_override_w.unwrap_or_else(|| {
            let pk = self.user_power_max_w.iter().copied().fold(0.0, f64::max);
            10.0 * self.users as f64 * pk
        })
    }

    pub fn eta2_w(&self) -> f64 {
        self.eta2_override_w
            .unwrap_or(10.0 * self.bs_power_max_w)
    }

    pub fn eta(&self, link: Link) -> f64 {
        match link {
            Link::Up => self.eta1_w(),
            Link::Down => self.eta2_w(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.users;
        let bad = |msg: String| Err(Error::Config(msg));
        if k == 0 {
            return bad("at least one user is required".into());
        }
        for (name, len) in [
            ("user_power_max", self.user_power_max_w.len()),
            ("task_bits", self.task_bits.len()),
            ("deadline_slots", self.deadlines.len()),
            ("result_ratio", self.result_ratio.len()),
            ("error_prob_ul", self.eps_ul.len()),
            ("error_prob_dl", self.eps_dl.len()),
            ("weights", self.weights.len()),
        ] {
            if len != k {
                return bad(format!("{name} has {len} entries for {k} users"));
            }
        }
        if self.subcarriers_ul == 0 || self.subcarriers_dl == 0 {
            return bad("each link needs at least one sub-carrier".into());
        }
        if self.slots_ul == 0 || self.slots_dl == 0 {
            return bad("each link needs at least one slot".into());
        }
        if self.tau > self.slots_ul {
            return bad(format!(
                "tau = {} exceeds the uplink frame of {} slots",
                self.tau, self.slots_ul
            ));
        }
        if !(self.subcarrier_bandwidth_hz > 0.0) {
            return bad("sub-carrier bandwidth must be positive".into());
        }
        if !(self.bs_power_max_w > 0.0) {
            return bad("base-station budget must be positive".into());
        }
        if !(self.r_inner_m > 0.0 && self.r_outer_m >= self.r_inner_m) {
            return bad("cell radii must satisfy 0 < r_inner <= r_outer".into());
        }
        for i in 0..k {
            let d = self.deadlines[i];
            if d <= self.tau || d > self.tau + self.slots_dl {
                return bad(format!(
                    "deadline of user {i} is {d}, must lie in ({}, {}]",
                    self.tau,
                    self.tau + self.slots_dl
                ));
            }
            for (name, eps) in [("error_prob_ul", self.eps_ul[i]), ("error_prob_dl", self.eps_dl[i])] {
                if !(eps > 0.0 && eps < 1.0) {
                    return bad(format!("{name} of user {i} is {eps}, must lie in (0, 1)"));
                }
            }
            if !(self.weights[i] >= 1.0) {
                return bad(format!("weight of user {i} must be >= 1"));
            }
            // A zero ratio leaves the user without a downlink demand.
            if !(self.result_ratio[i] >= 0.0 && self.result_ratio[i].is_finite()) {
                return bad(format!("result ratio of user {i} must be nonnegative"));
            }
            if !(self.task_bits[i] > 0.0) {
                return bad(format!("task size of user {i} must be positive"));
            }
            if !(self.user_power_max_w[i] > 0.0) {
                return bad(format!("power budget of user {i} must be positive"));
            }
        }
        for eta in [self.eta1_override_w, self.eta2_override_w].into_iter().flatten() {
            if !(eta >= 0.0) {
                return bad("penalty factors must be nonnegative".into());
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        file.into_config()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&ConfigFile::from_config(self)).expect("config serializes")
    }
}

/// Value given once for all users or once per user.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerUser<T> {
    All(T),
    Each(Vec<T>),
}

impl<T: Clone> PerUser<T> {
    fn expand(self, users: usize, name: &str) -> Result<Vec<T>> {
        match self {
            PerUser::All(v) => Ok(vec![v; users]),
            PerUser::Each(v) if v.len() == users => Ok(v),
            PerUser::Each(v) => Err(Error::Config(format!(
                "{name} lists {} values for {users} users",
                v.len()
            ))),
        }
    }

    fn compact(values: &[T]) -> Self
    where
        T: PartialEq,
    {
        match values.first() {
            Some(first) if values.iter().all(|v| v == first) => PerUser::All(first.clone()),
            _ => PerUser::Each(values.to_vec()),
        }
    }
}

/// On-disk TOML schema. Powers are in dBm; everything else is in SI units
/// or slot counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub users: usize,
    pub subcarriers_ul: usize,
    pub subcarriers_dl: usize,
    pub slots_ul: usize,
    pub slots_dl: usize,
    pub tau: usize,
    pub subcarrier_bandwidth_hz: f64,
    pub noise_psd_dbm_hz: f64,
    pub bs_power_max_dbm: f64,
    pub user_power_max_dbm: PerUser<f64>,
    pub task_bits: PerUser<f64>,
    pub deadline_slots: PerUser<usize>,
    pub result_ratio: PerUser<f64>,
    pub error_prob_ul: PerUser<f64>,
    pub error_prob_dl: PerUser<f64>,
    pub weights: PerUser<f64>,
    pub r_inner_m: f64,
    pub r_outer_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta1_w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta2_w: Option<f64>,
}

impl ConfigFile {
    pub fn into_config(self) -> Result<SystemConfig> {
        let k = self.users;
        let cfg = SystemConfig {
            users: k,
            subcarriers_ul: self.subcarriers_ul,
            subcarriers_dl: self.subcarriers_dl,
            slots_ul: self.slots_ul,
            slots_dl: self.slots_dl,
            tau: self.tau,
            subcarrier_bandwidth_hz: self.subcarrier_bandwidth_hz,
            noise_psd_dbm_hz: self.noise_psd_dbm_hz,
            bs_power_max_w: dbm_to_w(self.bs_power_max_dbm),
            user_power_max_w: self
                .user_power_max_dbm
                .expand(k, "user_power_max_dbm")?
                .into_iter()
                .map(dbm_to_w)
                .collect(),
            task_bits: self.task_bits.expand(k, "task_bits")?,
            deadlines: self.deadline_slots.expand(k, "deadline_slots")?,
            result_ratio: self.result_ratio.expand(k, "result_ratio")?,
            eps_ul: self.error_prob_ul.expand(k, "error_prob_ul")?,
            eps_dl: self.error_prob_dl.expand(k, "error_prob_dl")?,
            weights: self.weights.expand(k, "weights")?,
            r_inner_m: self.r_inner_m,
            r_outer_m: self.r_outer_m,
            eta1_override_w: self.eta1_w,
            eta2_override_w: self.eta2_w,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_config(cfg: &SystemConfig) -> Self {
        let dbm: Vec<f64> = cfg.user_power_max_w.iter().map(|&w| w_to_dbm(w)).collect();
        ConfigFile {
            users: cfg.users,
            subcarriers_ul: cfg.subcarriers_ul,
            subcarriers_dl: cfg.subcarriers_dl,
            slots_ul: cfg.slots_ul,
            slots_dl: cfg.slots_dl,
            tau: cfg.tau,
            subcarrier_bandwidth_hz: cfg.subcarrier_bandwidth_hz,
            noise_psd_dbm_hz: cfg.noise_psd_dbm_hz,
            bs_power_max_dbm: w_to_dbm(cfg.bs_power_max_w),
            user_power_max_dbm: PerUser::compact(&dbm),
            task_bits: PerUser::compact(&cfg.task_bits),
            deadline_slots: PerUser::compact(&cfg.deadlines),
            result_ratio: PerUser::compact(&cfg.result_ratio),
            error_prob_ul: PerUser::compact(&cfg.eps_ul),
            error_prob_dl: PerUser::compact(&cfg.eps_dl),
            weights: PerUser::compact(&cfg.weights),
            r_inner_m: cfg.r_inner_m,
            r_outer_m: cfg.r_outer_m,
            eta1_w: cfg.eta1_override_w,
            eta2_w: cfg.eta2_override_w,
        }
    }
}

/// Distance-dependent attenuation `35.3 + 37.6 log10(d)` in dB, `d` in metres.
pub fn path_loss_db(distance_m: f64) -> Result<f64> {
    if !(distance_m > 0.0) || !distance_m.is_finite() {
        return Err(Error::Domain {
            what: "distance",
            value: distance_m,
        });
    }
    Ok(35.3 + 37.6 * distance_m.log10())
}

/// Noise power per sub-carrier in watts.
pub fn noise_power_w(cfg: &SystemConfig) -> f64 {
    let dbm = cfg.noise_psd_dbm_hz + 10.0 * cfg.subcarrier_bandwidth_hz.log10();
    dbm_to_w(dbm)
}

/// SNR of a resource with normalized gain `gain` driven at `power_w`.
pub fn snr(gain: f64, power_w: f64) -> f64 {
    gain * power_w
}

/// Large- and small-scale fading of one drop, before noise normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Fading {
    pub distance_m: Vec<f64>,
    /// Unit-mean exponential power gains, `[k][m]`.
    pub small_scale_ul: Vec<Vec<f64>>,
    pub small_scale_dl: Vec<Vec<f64>>,
    pub seed: u64,
}

impl Fading {
    /// Draws distances (uniform over the annulus area) and then the uplink
    /// and downlink small-scale gains, user-major, from one ChaCha8 stream.
    pub fn draw(cfg: &SystemConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r1sq, r2sq) = (cfg.r_inner_m.powi(2), cfg.r_outer_m.powi(2));
        let distance_m = (0..cfg.users)
            .map(|_| {
                if r2sq > r1sq {
                    rng.random_range(r1sq..r2sq).sqrt()
                } else {
                    cfg.r_inner_m
                }
            })
            .collect();
        let mut draw_link = |m: usize| -> Vec<Vec<f64>> {
            (0..cfg.users)
                .map(|_| (0..m).map(|_| Exp1.sample(&mut rng)).map(|x: f64| x.max(f64::MIN_POSITIVE)).collect())
                .collect()
        };
        let small_scale_ul = draw_link(cfg.subcarriers_ul);
        let small_scale_dl = draw_link(cfg.subcarriers_dl);
        Fading {
            distance_m,
            small_scale_ul,
            small_scale_dl,
            seed,
        }
    }
}

/// Noise-normalized channel gains `g = |h|^2 / sigma^2` of one drop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    /// `[k][m_u]`, 1/W.
    pub gain_ul: Vec<Vec<f64>>,
    /// `[k][m_d]`, 1/W.
    pub gain_dl: Vec<Vec<f64>>,
    pub distance_m: Vec<f64>,
    pub seed: u64,
}

impl ChannelRealization {
    pub fn from_fading(fading: &Fading, noise_w: f64) -> Result<Self> {
        let attenuation = fading
            .distance_m
            .iter()
            .map(|&d| path_loss_db(d).map(|pl| 10f64.powf(-pl / 10.0)))
            .collect::<Result<Vec<_>>>()?;
        let scale = |gains: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            gains
                .iter()
                .zip(&attenuation)
                .map(|(row, &a)| row.iter().map(|&h2| h2 * a / noise_w).collect())
                .collect()
        };
        let real = ChannelRealization {
            gain_ul: scale(&fading.small_scale_ul),
            gain_dl: scale(&fading.small_scale_dl),
            distance_m: fading.distance_m.clone(),
            seed: fading.seed,
        };
        real.validate()?;
        Ok(real)
    }

    /// Synthetic realization with the given gains; used for hand-built
    /// instances.
    pub fn from_gains(gain_ul: Vec<Vec<f64>>, gain_dl: Vec<Vec<f64>>) -> Result<Self> {
        let real = ChannelRealization {
            distance_m: Vec::new(),
            gain_ul,
            gain_dl,
            seed: 0,
        };
        real.validate()?;
        Ok(real)
    }

    pub fn gains(&self, link: Link) -> &[Vec<f64>] {
        match link {
            Link::Up => &self.gain_ul,
            Link::Down => &self.gain_dl,
        }
    }

    pub fn gain(&self, link: Link, k: usize, m: usize) -> f64 {
        self.gains(link)[k][m]
    }

    fn validate(&self) -> Result<()> {
        for g in self.gain_ul.iter().chain(&self.gain_dl).flatten() {
            if !(*g > 0.0 && g.is_finite()) {
                return Err(Error::Domain {
                    what: "channel gain",
                    value: *g,
                });
            }
        }
        Ok(())
    }

    /// Checks that the gain tables match the configuration dimensions.
    pub fn check_shape(&self, cfg: &SystemConfig) -> Result<()> {
        for link in Link::BOTH {
            let g = self.gains(link);
            if g.len() != cfg.users || g.iter().any(|row| row.len() != cfg.subcarriers(link)) {
                return Err(Error::Shape(format!(
                    "{link:?} gains do not match {} users x {} sub-carriers",
                    cfg.users,
                    cfg.subcarriers(link)
                )));
            }
        }
        Ok(())
    }
}

/// Draws a complete channel realization; deterministic in `seed`.
pub fn draw_realization(cfg: &SystemConfig, seed: u64) -> Result<ChannelRealization> {
    ChannelRealization::from_fading(&Fading::draw(cfg, seed), noise_power_w(cfg))
}
