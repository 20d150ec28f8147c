//! Array geometry, frequency sets, scenarios and the snapshot data model.
//!
//! A uniform linear array of `n_sensors` elements with spacing `d` observes
//! sources at directions `theta`. At multiplier `f` of the fundamental `f0`
//! sensor `m` sees phase `exp(-j 2 pi w f m)` with `w = f0 d cos(theta) / c`.

use std::io::{Read, Write};
use std::path::Path;

use faer::Mat;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type CMat = Mat<C64>;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub n_sensors: usize,
    #[serde(rename = "spacing_m")]
    pub spacing: f64,
    #[serde(rename = "speed_mps")]
    pub speed: f64,
    #[serde(rename = "f0_hz")]
    pub f0: f64,
}

impl ArraySpec {
    pub fn new(n_sensors: usize, spacing: f64, speed: f64, f0: f64) -> Result<Self> {
        let a = Self { n_sensors, spacing, speed, f0 };
        a.validate()?;
        Ok(a)
    }

    /// Spacing of half a wavelength at the fundamental frequency.
    pub fn half_wavelength(n_sensors: usize, speed: f64, f0: f64) -> Result<Self> {
        Self::new(n_sensors, speed / (2.0 * f0), speed, f0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sensors < 2 {
            return invalid(format!("array needs at least 2 sensors, got {}", self.n_sensors));
        }
        for (name, v) in [("spacing", self.spacing), ("speed", self.speed), ("f0", self.f0)] {
            if !(v.is_finite() && v > 0.0) {
                return invalid(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.w_max() > 0.5 + 1e-12 {
            return invalid(format!(
                "spacing {} exceeds half a wavelength at f0 (w_max = {})",
                self.spacing,
                self.w_max()
            ));
        }
        Ok(())
    }

    /// Largest |w| reachable by a physical direction.
    pub fn w_max(&self) -> f64 {
        self.f0 * self.spacing / self.speed
    }

    pub fn doa_to_w(&self, theta_deg: f64) -> Result<f64> {
        if !(0.0..=180.0).contains(&theta_deg) {
            return Err(Error::Domain(format!("theta {theta_deg} outside [0, 180] degrees")));
        }
        Ok(self.w_max() * theta_deg.to_radians().cos())
    }

    pub fn w_to_doa(&self, w: f64) -> Result<f64> {
        let x = w / self.w_max();
        if x.abs() > 1.0 + 1e-9 || !x.is_finite() {
            return Err(Error::Domain(format!("w = {w} is outside the visible region")));
        }
        Ok(x.clamp(-1.0, 1.0).acos().to_degrees())
    }

    /// Direction in degrees for a root `z` on the unit circle given its phase angle.
    pub fn z_angle_to_theta(&self, angle: f64) -> Result<f64> {
        let x = angle / (TWO_PI * self.w_max());
        if x.abs() > 1.0 + 1e-9 || !x.is_finite() {
            return Err(Error::Domain(format!("root angle {angle} maps outside [-1, 1]")));
        }
        Ok((std::f64::consts::PI - x.clamp(-1.0, 1.0).acos()).to_degrees())
    }
}

/// Integer multiples of the fundamental frequency, strictly ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "FrequencySetFile", into = "FrequencySetFile")]
pub struct FrequencySet {
    multipliers: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct FrequencySetFile {
    multipliers: Vec<u32>,
}

impl TryFrom<FrequencySetFile> for FrequencySet {
    type Error = Error;
    fn try_from(f: FrequencySetFile) -> Result<Self> {
        FrequencySet::new(f.multipliers)
    }
}

impl From<FrequencySet> for FrequencySetFile {
    fn from(f: FrequencySet) -> Self {
        Self { multipliers: f.multipliers }
    }
}

impl FrequencySet {
    pub fn new(multipliers: Vec<u32>) -> Result<Self> {
        if multipliers.is_empty() {
            return invalid("frequency set is empty");
        }
        if multipliers[0] == 0 {
            return invalid("frequency multipliers must be at least 1");
        }
        if multipliers.windows(2).any(|p| p[1] <= p[0]) {
            return invalid(format!("frequency multipliers must be strictly ascending: {multipliers:?}"));
        }
        Ok(Self { multipliers })
    }

    /// The set {1, 2, ..., n}.
    pub fn consecutive(n: usize) -> Result<Self> {
        Self::new((1..=n as u32).collect())
    }

    pub fn multipliers(&self) -> &[u32] {
        &self.multipliers
    }

    pub fn n_freq(&self) -> usize {
        self.multipliers.len()
    }

    pub fn max(&self) -> u32 {
        *self.multipliers.last().unwrap()
    }

    pub fn is_consecutive(&self) -> bool {
        self.multipliers.iter().enumerate().all(|(i, &f)| f as usize == i + 1)
    }

    /// Length `N` of the virtual aperture: `f_max (n_sensors - 1) + 1`.
    pub fn aperture(&self, n_sensors: usize) -> usize {
        self.max() as usize * (n_sensors - 1) + 1
    }

    /// Sorted distinct lags `{m f}` actually sampled by the array.
    pub fn support_set(&self, n_sensors: usize) -> Vec<usize> {
        let mut u: Vec<usize> = self
            .multipliers
            .iter()
            .flat_map(|&f| (0..n_sensors).map(move |m| m * f as usize))
            .collect();
        u.sort_unstable();
        u.dedup();
        u
    }
}

/// `a(f, w)[m] = exp(-j 2 pi w f m)`.
pub fn steering_vector(multiplier: u32, w: f64, n_sensors: usize) -> Vec<C64> {
    (0..n_sensors)
        .map(|m| C64::from_polar(1.0, -TWO_PI * w * multiplier as f64 * m as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Source {
    pub theta_deg: f64,
    pub w: f64,
    /// Per-frequency amplitude with unit l2 norm.
    pub amplitude: Vec<C64>,
    pub gain: f64,
}

impl Source {
    pub fn new(theta_deg: f64, amplitude: Vec<C64>, gain: f64, array: &ArraySpec) -> Result<Self> {
        let w = array.doa_to_w(theta_deg)?;
        let norm = amplitude.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return invalid(format!("source amplitude must have unit norm, got {norm}"));
        }
        if !(gain.is_finite() && gain >= 0.0) {
            return invalid(format!("source gain must be non-negative, got {gain}"));
        }
        Ok(Self { theta_deg, w, amplitude, gain })
    }

    /// Equal-magnitude amplitude `1/sqrt(n_freq)` across frequencies.
    pub fn flat(theta_deg: f64, n_freq: usize, gain: f64, array: &ArraySpec) -> Result<Self> {
        let a = C64::new(1.0 / (n_freq as f64).sqrt(), 0.0);
        Self::new(theta_deg, vec![a; n_freq], gain, array)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexValue {
    pub re: f64,
    pub im: f64,
}

impl From<C64> for ComplexValue {
    fn from(z: C64) -> Self {
        Self { re: z.re, im: z.im }
    }
}

impl From<ComplexValue> for C64 {
    fn from(v: ComplexValue) -> Self {
        C64::new(v.re, v.im)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SourceFile {
    theta_deg: f64,
    amplitude: Vec<ComplexValue>,
    gain: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScenarioFile {
    array: ArraySpec,
    freqs: FrequencySet,
    sources: Vec<SourceFile>,
    snr_db: Option<f64>,
    seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub array: ArraySpec,
    pub freqs: FrequencySet,
    pub sources: Vec<Source>,
    /// `None` means noise-free.
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl Scenario {
    pub fn new(
        array: ArraySpec,
        freqs: FrequencySet,
        sources: Vec<Source>,
        snr_db: Option<f64>,
        seed: u64,
    ) -> Result<Self> {
        array.validate()?;
        for s in &sources {
            if s.amplitude.len() != freqs.n_freq() {
                return Err(Error::DimensionMismatch(format!(
                    "source at {} deg has {} amplitudes for {} frequencies",
                    s.theta_deg,
                    s.amplitude.len(),
                    freqs.n_freq()
                )));
            }
        }
        for (i, a) in sources.iter().enumerate() {
            if sources[..i].iter().any(|b| b.w == a.w) {
                return invalid(format!("duplicate source direction {} deg", a.theta_deg));
            }
        }
        if let Some(snr) = snr_db {
            if !snr.is_finite() {
                return invalid("snr_db must be finite or null");
            }
        }
        Ok(Self { array, freqs, sources, snr_db, seed })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ScenarioFile = serde_json::from_str(text)?;
        let sources = f
            .sources
            .into_iter()
            .map(|s| {
                Source::new(s.theta_deg, s.amplitude.into_iter().map(C64::from).collect(), s.gain, &f.array)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(f.array, f.freqs, sources, f.snr_db, f.seed)
    }

    pub fn to_json(&self) -> Result<String> {
        let f = ScenarioFile {
            array: self.array,
            freqs: self.freqs.clone(),
            sources: self
                .sources
                .iter()
                .map(|s| SourceFile {
                    theta_deg: s.theta_deg,
                    amplitude: s.amplitude.iter().map(|&a| a.into()).collect(),
                    gain: s.gain,
                })
                .collect(),
            snr_db: self.snr_db,
            seed: self.seed,
        };
        Ok(serde_json::to_string_pretty(&f)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Sum of source gains, the atomic norm of the clean data for well-separated sources.
    pub fn total_gain(&self) -> f64 {
        self.sources.iter().map(|s| s.gain).sum()
    }
}

/// Snapshot matrix `Y`, one row per sensor and one column per frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    pub y: CMat,
}

impl DataMatrix {
    pub fn new(y: CMat) -> Self {
        Self { y }
    }

    pub fn zeros(n_sensors: usize, n_freq: usize) -> Self {
        Self { y: Mat::zeros(n_sensors, n_freq) }
    }

    pub fn n_sensors(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_freq(&self) -> usize {
        self.y.ncols()
    }

    pub fn frobenius(&self) -> f64 {
        frobenius(&self.y)
    }

    /// Checks the shape against an array and frequency set.
    pub fn check_dims(&self, n_sensors: usize, n_freq: usize) -> Result<()> {
        if self.n_sensors() != n_sensors || self.n_freq() != n_freq {
            return Err(Error::DimensionMismatch(format!(
                "data is {}x{}, expected {}x{}",
                self.n_sensors(),
                self.n_freq(),
                n_sensors,
                n_freq
            )));
        }
        Ok(())
    }

    /// CSV with header `sensor,freq,re,im`, sensor-major, zero-based indices.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sensor", "freq", "re", "im"])?;
        for m in 0..self.n_sensors() {
            for f in 0..self.n_freq() {
                let z = self.y[(m, f)];
                w.write_record(&[m.to_string(), f.to_string(), fmt_f64(z.re), fmt_f64(z.im)])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
        if header != ["sensor", "freq", "re", "im"] {
            return invalid(format!("unexpected data header {header:?}"));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != 4 {
                return invalid(format!("data row has {} fields", rec.len()));
            }
            let m: usize = parse_field(&rec[0])?;
            let f: usize = parse_field(&rec[1])?;
            let re: f64 = parse_field(&rec[2])?;
            let im: f64 = parse_field(&rec[3])?;
            rows.push((m, f, C64::new(re, im)));
        }
        if rows.is_empty() {
            return invalid("data file has no rows");
        }
        let n_m = rows.iter().map(|r| r.0).max().unwrap() + 1;
        let n_f = rows.iter().map(|r| r.1).max().unwrap() + 1;
        if rows.len() != n_m * n_f {
            return Err(Error::DimensionMismatch(format!(
                "{} rows do not fill a {n_m}x{n_f} matrix",
                rows.len()
            )));
        }
        let mut seen = vec![false; n_m * n_f];
        let mut y = Mat::zeros(n_m, n_f);
        for (m, f, z) in rows {
            if std::mem::replace(&mut seen[m * n_f + f], true) {
                return invalid(format!("duplicate entry for sensor {m}, freq {f}"));
            }
            y[(m, f)] = z;
        }
        Ok(Self { y })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

fn parse_field<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::InvalidInput(format!("cannot parse field {s:?}")))
}

pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:e}")
}

pub fn frobenius(m: &CMat) -> f64 {
    let mut s = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            s += m[(i, j)].norm_sqr();
        }
    }
    s.sqrt()
}

/// Counter-based generator for trial `stream` of a run seeded with `seed`.
pub fn trial_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Circular complex Gaussian with unit variance.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub clean: DataMatrix,
    pub noisy: DataMatrix,
    /// Per-entry standard deviation of the noise actually added.
    pub noise_sigma: f64,
}

/// Builds `X = sum c_w [x_w(f) a(f, w)]` and adds noise scaled to the exact SNR.
pub fn synthesize_with<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Synthesis {
    let n_m = scenario.array.n_sensors;
    let mults = scenario.freqs.multipliers();
    let mut x = Mat::<C64>::zeros(n_m, mults.len());
    for s in &scenario.sources {
        for (fi, &f) in mults.iter().enumerate() {
            let coef = s.amplitude[fi] * s.gain;
            for (m, a) in steering_vector(f, s.w, n_m).into_iter().enumerate() {
                x[(m, fi)] += coef * a;
            }
        }
    }
    let clean = DataMatrix::new(x);
    let Some(snr) = scenario.snr_db else {
        return Synthesis { noisy: clean.clone(), clean, noise_sigma: 0.0 };
    };
    let mut noise = Mat::from_fn(n_m, mults.len(), |_, _| complex_normal(rng));
    let target = clean.frobenius() * 10f64.powf(-snr / 20.0);
    let current = frobenius(&noise);
    let scale = if current > 0.0 { target / current } else { 0.0 };
    for j in 0..noise.ncols() {
        for i in 0..noise.nrows() {
            noise[(i, j)] *= scale;
        }
    }
    let y = &clean.y + &noise;
    Synthesis {
        clean,
        noisy: DataMatrix::new(y),
        noise_sigma: target / ((n_m * mults.len()) as f64).sqrt(),
    }
}

/// Synthesizes using the scenario's own seed on stream 0.
pub fn synthesize(scenario: &Scenario) -> Synthesis {
    synthesize_with(scenario, &mut trial_rng(scenario.seed, 0))
}

/// `R`: reads `out(m, f) = full(F_f m, f)` from an `N x N_f` matrix.
pub fn map_r(full: &CMat, freqs: &FrequencySet, n_sensors: usize) -> Result<CMat> {
    let n = freqs.aperture(n_sensors);
    if full.nrows() != n || full.ncols() != freqs.n_freq() {
        return Err(Error::DimensionMismatch(format!(
            "expected {}x{} input, got {}x{}",
            n,
            freqs.n_freq(),
            full.nrows(),
            full.ncols()
        )));
    }
    let mults = freqs.multipliers();
    Ok(Mat::from_fn(n_sensors, mults.len(), |m, f| full[(mults[f] as usize * m, f)]))
}

/// Adjoint of [`map_r`]: places `Q(m, f)` at row `F_f m`, zeros elsewhere.
pub fn map_r_adjoint(q: &CMat, freqs: &FrequencySet) -> Result<CMat> {
    if q.ncols() != freqs.n_freq() {
        return Err(Error::DimensionMismatch(format!(
            "expected {} columns, got {}",
            freqs.n_freq(),
            q.ncols()
        )));
    }
    let n_m = q.nrows();
    let mut h = Mat::zeros(freqs.aperture(n_m), freqs.n_freq());
    for (f, &mult) in freqs.multipliers().iter().enumerate() {
        for m in 0..n_m {
            h[(mult as usize * m, f)] = q[(m, f)];
        }
    }
    Ok(h)
}

/// Reduced-row variant of [`map_r`] for matrices indexed by the support set.
pub fn map_r_reduced(reduced: &CMat, freqs: &FrequencySet, n_sensors: usize) -> Result<CMat> {
    let support = freqs.support_set(n_sensors);
    if reduced.nrows() != support.len() || reduced.ncols() != freqs.n_freq() {
        return Err(Error::DimensionMismatch(format!(
            "expected {}x{} input, got {}x{}",
            support.len(),
            freqs.n_freq(),
            reduced.nrows(),
            reduced.ncols()
        )));
    }
    let mults = freqs.multipliers();
    Ok(Mat::from_fn(n_sensors, mults.len(), |m, f| {
        let r = support.binary_search(&(mults[f] as usize * m)).unwrap();
        reduced[(r, f)]
    }))
}

/// Adjoint of [`map_r_reduced`].
pub fn map_r_reduced_adjoint(q: &CMat, freqs: &FrequencySet) -> Result<CMat> {
    let full = map_r_adjoint(q, freqs)?;
    let support = freqs.support_set(q.nrows());
    Ok(Mat::from_fn(support.len(), freqs.n_freq(), |r, f| full[(support[r], f)]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triplet_array() -> ArraySpec {
        ArraySpec::half_wavelength(12, 340.0, 100.0).unwrap()
    }

    #[test]
    fn scaled_doa_matches_fig3_values() {
        let a = triplet_array();
        for (theta, w) in [(80.7931, 0.08), (88.854, 0.01), (92.2924, -0.02)] {
            assert!((a.doa_to_w(theta).unwrap() - w).abs() < 1e-6);
            assert!((a.w_to_doa(w).unwrap() - theta).abs() < 1e-3);
        }
        assert!(a.doa_to_w(181.0).is_err());
    }

    #[test]
    fn root_angle_inverts_scaled_doa() {
        let a = triplet_array();
        for theta in [10.0, 45.0, 90.0, 120.0, 179.0] {
            let w = a.doa_to_w(theta).unwrap();
            let back = a.z_angle_to_theta(-TWO_PI * w).unwrap();
            assert!((back - theta).abs() < 1e-9);
        }
    }

    #[test]
    fn support_set_examples() {
        let f = FrequencySet::consecutive(3).unwrap();
        assert_eq!(f.support_set(5), vec![0, 1, 2, 3, 4, 6, 8, 9, 12]);
        assert_eq!(f.aperture(5), 13);
        let f = FrequencySet::new(vec![2, 3]).unwrap();
        assert_eq!(f.support_set(3), vec![0, 2, 3, 4, 6]);
        assert!(FrequencySet::new(vec![2, 2]).is_err());
        assert!(FrequencySet::new(vec![0, 1]).is_err());
    }

    #[test]
    fn map_r_reads_expected_entries() {
        let f = FrequencySet::consecutive(2).unwrap();
        let n = f.aperture(3);
        let full = Mat::from_fn(n, 2, |i, j| C64::new((10 * i + j) as f64, 0.0));
        let q = map_r(&full, &f, 3).unwrap();
        assert_eq!(q[(2, 0)].re, 20.0);
        assert_eq!(q[(2, 1)].re, 41.0);
        assert_eq!(q[(1, 1)].re, 21.0);
    }

    #[test]
    fn noise_hits_requested_snr() {
        let a = triplet_array();
        let freqs = FrequencySet::consecutive(5).unwrap();
        let src = vec![Source::flat(80.0, 5, 1.0, &a).unwrap(), Source::flat(100.0, 5, 2.0, &a).unwrap()];
        let sc = Scenario::new(a, freqs, src, Some(7.5), 3).unwrap();
        let s = synthesize(&sc);
        let w = &s.noisy.y - &s.clean.y;
        let snr = 20.0 * (s.clean.frobenius() / frobenius(&w)).log10();
        assert!((snr - 7.5).abs() < 1e-10);
        assert_eq!(synthesize(&sc).noisy, s.noisy);
    }

    #[test]
    fn csv_round_trip_preserves_values() {
        let y = Mat::from_fn(3, 2, |i, j| C64::new(i as f64 * 0.1 + 1e-17, -(j as f64) / 3.0));
        let d = DataMatrix::new(y);
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert_eq!(DataMatrix::read_csv(&buf[..]).unwrap(), d);
        assert!(DataMatrix::read_csv(&b"sensor,freq,re,im\n0,0,1,2\n1,1,1,1\n"[..]).is_err());
    }
}
