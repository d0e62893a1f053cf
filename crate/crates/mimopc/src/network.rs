//! Cellular topology, user placement and large-scale fading.
//!
//! A scenario is a frozen snapshot of the slowly varying quantities: base
//! station and user positions plus the path-loss/shadowing gain `v[j][g]`
//! between every BS `j` and every user `g`. Everything downstream (pilots,
//! channel draws, rate coefficients) is parameterized by it.
//!
//! Internally all powers are in watts; dB/dBm appear only at the config and
//! report boundary. When `normalize_noise` is set (the default), the gain
//! tensor and the noise power are jointly rescaled so the working noise power
//! is exactly 1. This affine rescaling leaves every SINR unchanged and keeps
//! products like `v^2 * p` in a well-conditioned floating-point range.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream::stream_rng;

/// Distance floor in meters: the path-loss model diverges as d -> 0.
pub const DEFAULT_MIN_DISTANCE_M: f64 = 10.0;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn dist(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn shifted(&self, t: (f64, f64)) -> Position {
        Position::new(self.x + t.0, self.y + t.1)
    }
}

fn default_pathloss_exponent() -> f64 {
    3.0
}
fn default_min_distance() -> f64 {
    DEFAULT_MIN_DISTANCE_M
}
fn default_true() -> bool {
    true
}

/// Accepts either a scalar (same user count in every cell) or a per-cell list.
#[derive(Deserialize)]
#[serde(untagged)]
enum UsersField {
    Uniform(usize),
    PerCell(Vec<usize>),
}

fn deserialize_users<'de, D>(de: D) -> std::result::Result<Vec<usize>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    Ok(match UsersField::deserialize(de)? {
        UsersField::Uniform(k) => vec![k],
        UsersField::PerCell(v) => v,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub num_cells: usize,
    /// One entry per cell; a single entry is broadcast to all cells.
    #[serde(deserialize_with = "deserialize_users")]
    pub users_per_cell: Vec<usize>,
    pub antennas: usize,
    pub cell_radius_m: f64,
    pub pmax_dbm: f64,
    pub noise_psd_dbm_hz: f64,
    pub bandwidth_hz: f64,
    #[serde(default = "default_pathloss_exponent")]
    pub pathloss_exponent: f64,
    pub shadowing_std_db: f64,
    pub seed: u64,
    #[serde(default = "default_min_distance")]
    pub min_distance_m: f64,
    #[serde(default = "default_true")]
    pub normalize_noise: bool,
}

impl ScenarioConfig {
    /// The 7-cell / 9-user / 96-antenna reference layout used throughout the
    /// shipped configs: 500 m radius, 10 dBm power budget, -169 dBm/Hz noise
    /// over 1 MHz, 8 dB shadowing, cubic path loss.
    pub fn reference(seed: u64) -> Self {
        ScenarioConfig {
            num_cells: 7,
            users_per_cell: vec![9],
            antennas: 96,
            cell_radius_m: 500.0,
            pmax_dbm: 10.0,
            noise_psd_dbm_hz: -169.0,
            bandwidth_hz: 1e6,
            pathloss_exponent: 3.0,
            shadowing_std_db: 8.0,
            seed,
            min_distance_m: DEFAULT_MIN_DISTANCE_M,
            normalize_noise: true,
        }
    }

    /// Small layout for fast tests and experiments.
    pub fn desk(seed: u64) -> Self {
        ScenarioConfig {
            num_cells: 3,
            users_per_cell: vec![4],
            antennas: 16,
            ..Self::reference(seed)
        }
    }

    pub fn with_users(mut self, k: usize) -> Self {
        self.users_per_cell = vec![k];
        self
    }

    pub fn users_in_cell(&self, i: usize) -> usize {
        if self.users_per_cell.len() == 1 {
            self.users_per_cell[0]
        } else {
            self.users_per_cell[i]
        }
    }

    pub fn total_users(&self) -> usize {
        (0..self.num_cells).map(|i| self.users_in_cell(i)).sum()
    }

    pub fn pmax_watts(&self) -> f64 {
        dbm_to_watts(self.pmax_dbm)
    }

    /// Physical noise power over the configured bandwidth, in watts.
    pub fn noise_power_watts(&self) -> f64 {
        dbm_to_watts(self.noise_psd_dbm_hz + 10.0 * self.bandwidth_hz.log10())
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_cells == 0 {
            return Err(Error::invalid("num_cells", "must be at least 1"));
        }
        if self.users_per_cell.is_empty()
            || (self.users_per_cell.len() != 1 && self.users_per_cell.len() != self.num_cells)
        {
            return Err(Error::invalid(
                "users_per_cell",
                "must hold one entry or one entry per cell",
            ));
        }
        if (0..self.num_cells).any(|i| self.users_in_cell(i) == 0) {
            return Err(Error::invalid("users_per_cell", "every cell needs at least 1 user"));
        }
        if self.antennas == 0 {
            return Err(Error::invalid("antennas", "must be at least 1"));
        }
        if !(self.cell_radius_m > 0.0) {
            return Err(Error::invalid("cell_radius_m", "must be positive"));
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::invalid("bandwidth_hz", "must be positive"));
        }
        if !(self.shadowing_std_db >= 0.0) {
            return Err(Error::invalid("shadowing_std_db", "must be nonnegative"));
        }
        if !(self.min_distance_m > 0.0) {
            return Err(Error::invalid("min_distance_m", "must be positive"));
        }
        if !self.pmax_dbm.is_finite() || !self.noise_psd_dbm_hz.is_finite() {
            return Err(Error::invalid("pmax_dbm", "power levels must be finite"));
        }
        if !(self.pathloss_exponent > 0.0) {
            return Err(Error::invalid("pathloss_exponent", "must be positive"));
        }
        Ok(())
    }
}

/// Cell arrangement and its wrap-around mirror translations.
///
/// The 7-cell case is the classic hexagonal cluster mirrored by the six
/// surrounding cluster images. Any other cell count is laid out as a row of
/// cells at the hexagonal pitch, wrapped on a one-dimensional torus (a ring).
#[derive(Clone, Debug, PartialEq)]
pub enum CellLayout {
    HexCluster7 { radius: f64 },
    Ring { radius: f64, cells: usize },
}

/// Rotate a vector by k * 60 degrees.
fn rot60(v: (f64, f64), k: usize) -> (f64, f64) {
    let ang = std::f64::consts::FRAC_PI_3 * k as f64;
    let (s, c) = ang.sin_cos();
    (v.0 * c - v.1 * s, v.0 * s + v.1 * c)
}

impl CellLayout {
    pub fn for_config(config: &ScenarioConfig) -> Self {
        if config.num_cells == 7 {
            CellLayout::HexCluster7 { radius: config.cell_radius_m }
        } else {
            CellLayout::Ring { radius: config.cell_radius_m, cells: config.num_cells }
        }
    }

    /// Base-station positions, cell 0 first.
    pub fn bs_positions(&self) -> Vec<Position> {
        match *self {
            CellLayout::HexCluster7 { radius } => {
                let pitch = 3f64.sqrt() * radius;
                let mut out = vec![Position::new(0.0, 0.0)];
                for k in 0..6 {
                    let t = rot60((pitch, 0.0), k);
                    out.push(Position::new(t.0, t.1));
                }
                out
            }
            CellLayout::Ring { radius, cells } => {
                let pitch = 3f64.sqrt() * radius;
                (0..cells).map(|i| Position::new(i as f64 * pitch, 0.0)).collect()
            }
        }
    }

    /// Mirror translations (including the identity) realizing the wrap.
    pub fn translations(&self) -> Vec<(f64, f64)> {
        match *self {
            CellLayout::HexCluster7 { radius } => {
                // Shift to the nearest image of the 7-cell cluster: the
                // cluster lattice vector has squared length 21 r^2.
                let base = (2.5 * 3f64.sqrt() * radius, 1.5 * radius);
                let mut out = vec![(0.0, 0.0)];
                for k in 0..6 {
                    out.push(rot60(base, k));
                }
                out
            }
            CellLayout::Ring { radius, cells } => {
                let period = cells as f64 * 3f64.sqrt() * radius;
                vec![(0.0, 0.0), (period, 0.0), (-period, 0.0)]
            }
        }
    }

    /// Minimum distance over all mirror images, without the distance floor.
    pub fn wrap_distance_raw(&self, a: &Position, b: &Position) -> f64 {
        self.translations()
            .iter()
            .map(|&t| a.dist(&b.shifted(t)))
            .fold(f64::INFINITY, f64::min)
    }
}

/// True if `p` lies inside the pointy-top hexagon of given radius at origin.
fn in_hexagon(p: (f64, f64), radius: f64) -> bool {
    let (x, y) = (p.0.abs(), p.1.abs());
    x <= 3f64.sqrt() / 2.0 * radius && y <= radius - x / 3f64.sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkScenario {
    pub config: ScenarioConfig,
    pub bs_positions: Vec<Position>,
    /// Cell-major user order: all users of cell 0, then cell 1, ...
    pub user_positions: Vec<Position>,
    /// Cell index of each user (redundant with the offsets, kept for lookups).
    pub user_cell: Vec<usize>,
    /// Large-scale gain, row = BS, column = user, in working units.
    pub large_scale: DMatrix<f64>,
    /// Working noise power (1.0 when `normalize_noise` is on).
    pub noise_power: f64,
    /// Working units = physical units * scale. Physical v = large_scale/scale.
    pub scale: f64,
}

impl NetworkScenario {
    pub fn num_cells(&self) -> usize {
        self.config.num_cells
    }

    pub fn num_users(&self) -> usize {
        self.user_positions.len()
    }

    pub fn antennas(&self) -> usize {
        self.config.antennas
    }

    pub fn pmax_watts(&self) -> f64 {
        self.config.pmax_watts()
    }

    pub fn layout(&self) -> CellLayout {
        CellLayout::for_config(&self.config)
    }

    /// Global index of user k of cell i.
    pub fn user_index(&self, cell: usize, k: usize) -> usize {
        let off: usize = (0..cell).map(|c| self.config.users_in_cell(c)).sum();
        off + k
    }

    /// Global user indices belonging to `cell`.
    pub fn users_of_cell(&self, cell: usize) -> std::ops::Range<usize> {
        let start = self.user_index(cell, 0);
        start..start + self.config.users_in_cell(cell)
    }

    /// Large-scale gain between BS `bs` and user `user` (working units).
    pub fn gain(&self, bs: usize, user: usize) -> f64 {
        self.large_scale[(bs, user)]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: NetworkScenario = serde_json::from_str(text)?;
        s.config.validate()?;
        if s.large_scale.nrows() != s.config.num_cells
            || s.large_scale.ncols() != s.config.total_users()
            || s.user_positions.len() != s.config.total_users()
        {
            return Err(Error::ShapeMismatch(
                "scenario tensor dimensions do not match its config".into(),
            ));
        }
        Ok(s)
    }
}

/// Wrap-around distance between two positions, clamped to the configured
/// minimum distance floor.
pub fn wrap_distance(a: &Position, b: &Position, scenario: &NetworkScenario) -> f64 {
    scenario
        .layout()
        .wrap_distance_raw(a, b)
        .max(scenario.config.min_distance_m)
}

/// Generates a scenario: BS lattice, uniform user drop per cell, and the
/// shadowed path-loss gain for every BS/user pair. Pure function of the
/// config (the seed included): identical configs give bit-identical output.
pub fn generate_scenario(config: &ScenarioConfig) -> Result<NetworkScenario> {
    config.validate()?;
    let layout = CellLayout::for_config(config);
    let bs_positions = layout.bs_positions();
    let radius = config.cell_radius_m;
    let n = config.total_users();

    // Stream 0: user placement. Rejection-sample offsets in the hexagon.
    let mut rng = stream_rng(config.seed, 0);
    let mut user_positions = Vec::with_capacity(n);
    let mut user_cell = Vec::with_capacity(n);
    for (i, bs) in bs_positions.iter().enumerate() {
        for _ in 0..config.users_in_cell(i) {
            let off = loop {
                let x = rng.gen_range(-1.0..1.0) * 3f64.sqrt() / 2.0 * radius;
                let y = rng.gen_range(-1.0..1.0) * radius;
                if in_hexagon((x, y), radius) {
                    break (x, y);
                }
            };
            user_positions.push(Position::new(bs.x + off.0, bs.y + off.1));
            user_cell.push(i);
        }
    }

    // Stream 1: independent log-normal shadowing per link, in dB.
    let mut shadow_rng = stream_rng(config.seed, 1);
    let normal = Normal::new(0.0, config.shadowing_std_db).map_err(|_| {
        Error::invalid("shadowing_std_db", "not a valid normal std deviation")
    })?;
    let noise_phys = config.noise_power_watts();
    let scale = if config.normalize_noise { 1.0 / noise_phys } else { 1.0 };

    let mut large_scale = DMatrix::<f64>::zeros(config.num_cells, n);
    for j in 0..config.num_cells {
        for g in 0..n {
            let d = layout
                .wrap_distance_raw(&user_positions[g], &bs_positions[j])
                .max(config.min_distance_m);
            let shadow_db: f64 = shadow_rng.sample(normal);
            let v = 10f64.powf(shadow_db / 10.0) / d.powf(config.pathloss_exponent);
            large_scale[(j, g)] = v * scale;
        }
    }

    Ok(NetworkScenario {
        config: config.clone(),
        bs_positions,
        user_positions,
        user_cell,
        large_scale,
        noise_power: noise_phys * scale,
        scale,
    })
}
