//! Shoebox room simulation with a first-order image method, plus the
//! impulse-response and observation containers shared by the rest of the
//! crate.
//!
//! Every microphone receives exactly seven arrivals: the direct path and one
//! mirror image of the source per wall. Delays are rounded to the nearest
//! sample and amplitudes follow `1 / distance` spreading, scaled by the
//! reflection coefficient for the images.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::convolve;
use crate::error::{invalid, Error, Result};
use crate::seeding::rng_from;
use crate::signal::SourceSignal;

pub type Point3 = [f64; 3];

/// Distance kept between any sampled position and the walls, in meters.
pub const WALL_MARGIN: f64 = 0.3;
/// Minimum separation between sampled positions, in meters.
pub const MIN_SEPARATION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomConfig {
    pub dimensions: Point3,
    pub reflection_coeff: f64,
    pub speed_of_sound: f64,
    pub sample_rate: u32,
}

impl Default for RoomConfig {
    fn default() -> Self {
        RoomConfig {
            dimensions: [5.0, 4.0, 3.0],
            reflection_coeff: 0.8,
            speed_of_sound: 343.0,
            sample_rate: 16_000,
        }
    }
}

impl RoomConfig {
    /// A compact room whose impulse responses fit in 192 taps at 16 kHz.
    pub fn desk() -> Self {
        RoomConfig {
            dimensions: [2.2, 1.8, 1.5],
            ..RoomConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimensions.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(invalid("room dimensions must be positive"));
        }
        if !(0.0..=1.0).contains(&self.reflection_coeff) {
            return Err(invalid("reflection coefficient must lie in [0, 1]"));
        }
        if !(self.speed_of_sound.is_finite() && self.speed_of_sound > 0.0) {
            return Err(invalid("speed of sound must be positive"));
        }
        if self.sample_rate == 0 {
            return Err(invalid("sample rate must be positive"));
        }
        Ok(())
    }

    fn samples_per_meter(&self) -> f64 {
        f64::from(self.sample_rate) / self.speed_of_sound
    }

    /// Smallest channel length that holds every first-order arrival for any
    /// geometry respecting [`WALL_MARGIN`].
    pub fn max_channel_len(&self) -> usize {
        let [a, b, c] = self.dimensions;
        let span = |d: f64| (d - 2.0 * WALL_MARGIN).max(0.0);
        // The longest image path mirrors across the far wall of the longest
        // axis: both points sit at the margin on opposite sides.
        let axes = [a, b, c];
        let mut worst: f64 = 0.0;
        for k in 0..3 {
            let mut d2 = 0.0;
            for (j, &d) in axes.iter().enumerate() {
                let s = if j == k { 2.0 * (d - WALL_MARGIN) } else { span(d) };
                d2 += s * s;
            }
            worst = worst.max(d2.sqrt());
        }
        (worst * self.samples_per_meter()).round() as usize + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub source_pos: Point3,
    pub mic_pos: Vec<Point3>,
}

impl Geometry {
    pub fn validate(&self, room: &RoomConfig) -> Result<()> {
        if self.mic_pos.len() < 2 {
            return Err(invalid("at least two microphones are required"));
        }
        let inside = |p: &Point3| {
            p.iter()
                .zip(room.dimensions.iter())
                .all(|(x, d)| *x > 0.0 && x < d)
        };
        if !inside(&self.source_pos) || !self.mic_pos.iter().all(inside) {
            return Err(invalid("all positions must lie strictly inside the room"));
        }
        for (i, a) in self.mic_pos.iter().enumerate() {
            for b in &self.mic_pos[i + 1..] {
                if distance(a, b) == 0.0 {
                    return Err(invalid("microphone positions must be distinct"));
                }
            }
        }
        Ok(())
    }
}

pub fn distance(a: &Point3, b: &Point3) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// N impulse responses of a common length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AirSet {
    pub channels: Vec<Vec<f64>>,
    pub sample_rate: u32,
}

impl AirSet {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        let set = AirSet {
            channels,
            sample_rate,
        };
        set.check_shape()?;
        Ok(set)
    }

    fn check_shape(&self) -> Result<()> {
        let Some(first) = self.channels.first() else {
            return Err(invalid("an AIR set needs at least one channel"));
        };
        if first.is_empty() {
            return Err(invalid("channels must have at least one tap"));
        }
        if self.channels.iter().any(|c| c.len() != first.len()) {
            return Err(invalid("all channels must share one length"));
        }
        Ok(())
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel_len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    /// Channels concatenated into one vector of length `N * L`.
    pub fn stacked(&self) -> Vec<f64> {
        self.channels.concat()
    }

    pub fn from_stacked(stacked: &[f64], n_channels: usize, sample_rate: u32) -> Result<Self> {
        if n_channels == 0 || !stacked.len().is_multiple_of(n_channels) {
            return Err(invalid("stacked length is not a multiple of the channel count"));
        }
        let len = stacked.len() / n_channels;
        let channels = stacked.chunks(len).map(<[f64]>::to_vec).collect();
        AirSet::new(channels, sample_rate)
    }

    pub fn scaled(&self, factor: f64) -> AirSet {
        AirSet {
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|v| v * factor).collect())
                .collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Reorder channels: output channel `i` is input channel `order[i]`.
    pub fn select(&self, order: &[usize]) -> AirSet {
        AirSet {
            channels: order.iter().map(|&i| self.channels[i].clone()).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// N microphone recordings of a common length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub recordings: Vec<Vec<f64>>,
    pub sample_rate: u32,
    pub noise_ratio: f64,
}

impl ObservationSet {
    pub fn new(recordings: Vec<Vec<f64>>, sample_rate: u32, noise_ratio: f64) -> Result<Self> {
        let obs = ObservationSet {
            recordings,
            sample_rate,
            noise_ratio,
        };
        obs.check_shape()?;
        Ok(obs)
    }

    pub(crate) fn check_shape(&self) -> Result<()> {
        let Some(first) = self.recordings.first() else {
            return Err(invalid("an observation set needs at least one recording"));
        };
        if first.is_empty() {
            return Err(invalid("recordings must be non-empty"));
        }
        if self.recordings.iter().any(|r| r.len() != first.len()) {
            return Err(invalid("all recordings must share one length"));
        }
        if self.recordings.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("recordings must be finite"));
        }
        Ok(())
    }

    pub fn n_mics(&self) -> usize {
        self.recordings.len()
    }

    pub fn len(&self) -> usize {
        self.recordings.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, order: &[usize]) -> ObservationSet {
        ObservationSet {
            recordings: order.iter().map(|&i| self.recordings[i].clone()).collect(),
            sample_rate: self.sample_rate,
            noise_ratio: self.noise_ratio,
        }
    }
}

/// Seven-arrival impulse response for each microphone.
pub fn image_method_air(room: &RoomConfig, geom: &Geometry, channel_len: usize) -> Result<AirSet> {
    room.validate()?;
    geom.validate(room)?;
    if channel_len == 0 {
        return Err(invalid("channel length must be positive"));
    }
    let spm = room.samples_per_meter();
    let images = wall_images(&geom.source_pos, &room.dimensions);

    let mut arrivals_per_mic = Vec::with_capacity(geom.mic_pos.len());
    let mut required = 0usize;
    for mic in &geom.mic_pos {
        let d0 = distance(&geom.source_pos, mic);
        let mut arrivals = vec![((d0 * spm).round() as usize, 1.0 / d0)];
        for img in &images {
            let d = distance(img, mic);
            arrivals.push(((d * spm).round() as usize, room.reflection_coeff / d));
        }
        required = required.max(arrivals.iter().map(|a| a.0 + 1).max().unwrap_or(0));
        arrivals_per_mic.push(arrivals);
    }
    if required > channel_len {
        return Err(Error::ChannelTooShort {
            len: channel_len,
            required,
        });
    }

    let channels = arrivals_per_mic
        .into_iter()
        .map(|arrivals| {
            let mut h = vec![0.0; channel_len];
            for (delay, amp) in arrivals {
                h[delay] += amp;
            }
            h
        })
        .collect();
    AirSet::new(channels, room.sample_rate)
}

fn wall_images(src: &Point3, dims: &Point3) -> [Point3; 6] {
    let mut out = [*src; 6];
    for axis in 0..3 {
        out[2 * axis][axis] = -src[axis];
        out[2 * axis + 1][axis] = 2.0 * dims[axis] - src[axis];
    }
    out
}

/// Noiseless microphone signals: each recording is the full convolution of
/// the source with that microphone's impulse response.
pub fn synthesize_observations(air: &AirSet, src: &SourceSignal) -> Result<ObservationSet> {
    if air.sample_rate != src.sample_rate() {
        return Err(invalid(format!(
            "sample rate mismatch: AIRs at {} Hz, source at {} Hz",
            air.sample_rate,
            src.sample_rate()
        )));
    }
    let recordings = air
        .channels
        .iter()
        .map(|h| convolve(src.samples(), h))
        .collect();
    ObservationSet::new(recordings, air.sample_rate, 0.0)
}

/// Uniform source and microphone placement away from the walls.
pub fn random_geometry(room: &RoomConfig, n_mics: usize, seed: u64) -> Result<Geometry> {
    if n_mics < 2 {
        return Err(invalid("at least two microphones are required"));
    }
    room.validate()?;
    if room.dimensions.iter().any(|d| *d <= 2.0 * WALL_MARGIN) {
        return Err(Error::InfeasibleGeometry(format!(
            "room {:?} cannot keep a {WALL_MARGIN} m wall margin",
            room.dimensions
        )));
    }
    let mut rng = rng_from(seed);
    const MAX_ATTEMPTS: usize = 10_000;
    let mut points: Vec<Point3> = Vec::with_capacity(n_mics + 1);
    let mut attempts = 0;
    while points.len() < n_mics + 1 {
        attempts += 1;
        if attempts > MAX_ATTEMPTS {
            return Err(Error::InfeasibleGeometry(format!(
                "could not place {} points with {MIN_SEPARATION} m separation",
                n_mics + 1
            )));
        }
        let mut p = [0.0; 3];
        for (x, d) in p.iter_mut().zip(room.dimensions) {
            *x = rng.random_range(WALL_MARGIN..d - WALL_MARGIN);
        }
        if points.iter().all(|q| distance(&p, q) >= MIN_SEPARATION) {
            points.push(p);
        }
    }
    let source_pos = points.remove(0);
    Ok(Geometry {
        source_pos,
        mic_pos: points,
    })
}

/// Antisymmetric matrix of pairwise delay differences in samples.
///
/// Entries are `None` where a delay could not be determined for one of the
/// two channels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TdoaMatrix {
    pub n: usize,
    pub entries: Vec<Option<i64>>,
}

impl TdoaMatrix {
    pub fn from_delays(delays: &[Option<usize>]) -> Self {
        let n = delays.len();
        let mut entries = Vec::with_capacity(n * n);
        for m in 0..n {
            for k in 0..n {
                entries.push(match (delays[m], delays[k]) {
                    (Some(a), Some(b)) => Some(a as i64 - b as i64),
                    _ => None,
                });
            }
        }
        TdoaMatrix { n, entries }
    }

    pub fn get(&self, m: usize, n: usize) -> Option<i64> {
        self.entries[m * self.n + n]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for m in 0..self.n {
            let row: Vec<String> = (0..self.n)
                .map(|k| self.get(m, k).map_or_else(|| "NA".to_string(), |v| v.to_string()))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Index of the earliest nonzero tap, the direct path of a simulated AIR.
pub fn direct_path_index(channel: &[f64]) -> Option<usize> {
    channel.iter().position(|v| *v != 0.0)
}

/// Remove the delay shared by all channels and the trailing zeros after the
/// last arrival of any channel. Returns the trimmed set and the removed
/// leading delay.
///
/// Cross-relations cannot observe a delay common to every channel (it is
/// indistinguishable from a delayed source), nor zero padding common to
/// every channel; both enlarge the null space with shifted copies of the
/// true response. Trimming leaves every TDOA unchanged.
pub fn trim_common_support(air: &AirSet) -> Result<(AirSet, usize)> {
    let mut first = usize::MAX;
    let mut last = 0;
    for (i, c) in air.channels.iter().enumerate() {
        let lo = direct_path_index(c)
            .ok_or_else(|| invalid(format!("channel {i} has no nonzero tap")))?;
        let hi = c.iter().rposition(|v| *v != 0.0).unwrap_or(lo);
        first = first.min(lo);
        last = last.max(hi);
    }
    let channels = air
        .channels
        .iter()
        .map(|c| c[first..=last].to_vec())
        .collect();
    Ok((AirSet::new(channels, air.sample_rate)?, first))
}

pub fn ground_truth_tdoas(air: &AirSet) -> Result<TdoaMatrix> {
    let delays: Vec<Option<usize>> = air.channels.iter().map(|c| direct_path_index(c)).collect();
    if let Some(i) = delays.iter().position(Option::is_none) {
        return Err(invalid(format!("channel {i} has no nonzero tap")));
    }
    Ok(TdoaMatrix::from_delays(&delays))
}
