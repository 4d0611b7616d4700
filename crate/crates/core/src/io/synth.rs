//! Seeded synthetic corpora with ground-truth stays.
//!
//! Each user has a home and a few other places. A day is home, then a few
//! visits, then home again until local midnight. Records are emitted at every
//! arrival and departure and at jittered intervals in between; travel legs
//! produce sparse transient points. GPS records scatter around the true place
//! with Gaussian noise; cellular records sit on the serving tower of a place,
//! a fixed point offset from it. A ping-pong event inserts one record at a
//! paired far tower a few seconds after a cellular record.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{haversine_km, LatLon, LocationRecord, SECONDS_PER_DAY};
use crate::par::Executor;

use super::ingest::{csv_line_len, write_records, Corpus, RECORD_COLUMNS};

/// Kilometres per degree of latitude on the reference sphere.
const KM_PER_DEG: f64 = crate::model::EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub users: usize,
    pub days: usize,
    /// UTC instant of the first local midnight.
    pub start_epoch: i64,
    pub utc_offset_s: i64,
    pub center: LatLon,
    /// Radius around `center` in which users' places lie.
    pub city_radius_km: f64,
    /// Radius around a user's home in which their other places lie.
    pub activity_radius_km: f64,
    pub places_per_user: usize,
    pub min_place_spacing_km: f64,
    /// Inclusive range of stays per day, counting both home stays.
    pub stays_per_day: (usize, usize),
    /// Dwell range of daytime visits, minutes.
    pub dwell_min: (f64, f64),
    pub travel_speed_kmh: f64,
    pub sample_interval_s: f64,
    pub travel_sample_interval_s: f64,
    /// Probability a record is GPS; the rest are cellular.
    pub gps_fraction: f64,
    pub gps_noise_m: f64,
    /// Distance of each place's serving tower from the place.
    pub cell_noise_m: f64,
    /// Probability a cellular in-stay record is followed by a ping-pong event.
    pub osc_rate: f64,
    pub tower_distance_km: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            users: 10,
            days: 7,
            // 2019-03-04T00:00:00Z
            start_epoch: 1_551_657_600,
            utc_offset_s: 0,
            center: LatLon::new(47.6062, -122.3321),
            city_radius_km: 15.0,
            activity_radius_km: 8.0,
            places_per_user: 5,
            min_place_spacing_km: 2.0,
            stays_per_day: (3, 5),
            dwell_min: (20.0, 180.0),
            travel_speed_kmh: 30.0,
            sample_interval_s: 60.0,
            travel_sample_interval_s: 120.0,
            gps_fraction: 0.5,
            gps_noise_m: 5.0,
            cell_noise_m: 300.0,
            osc_rate: 0.0,
            tower_distance_km: 2.0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid synthetic config: {0}")]
pub struct SynthError(pub String);

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError(m.to_string()));
        for (name, p) in [("gps_fraction", self.gps_fraction), ("osc_rate", self.osc_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SynthError(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if !(self.gps_noise_m >= 0.0 && self.cell_noise_m >= 0.0) {
            return bad("noise sigmas must be non-negative");
        }
        if self.places_per_user < 2 {
            return bad("places_per_user must be at least 2");
        }
        let (lo, hi) = self.stays_per_day;
        if lo < 1 || lo > hi {
            return bad("stays_per_day must be a non-empty range starting at 1 or more");
        }
        let (dlo, dhi) = self.dwell_min;
        if !(dlo > 0.0 && dlo <= dhi) {
            return bad("dwell_min must be a positive range");
        }
        for (name, v) in [
            ("travel_speed_kmh", self.travel_speed_kmh),
            ("sample_interval_s", self.sample_interval_s),
            ("travel_sample_interval_s", self.travel_sample_interval_s),
            ("city_radius_km", self.city_radius_km),
            ("activity_radius_km", self.activity_radius_km),
            ("tower_distance_km", self.tower_distance_km),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SynthError(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.center.is_valid() {
            return bad("center is not a valid coordinate");
        }
        Ok(())
    }
}

/// One true dwell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthStay {
    pub device_id: String,
    pub place: usize,
    pub lat: f64,
    pub lon: f64,
    pub start: i64,
    pub end: i64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynthOutput {
    /// Sorted by device, then time.
    pub records: Vec<LocationRecord>,
    pub truth: Vec<TruthStay>,
    /// Size of `records` written as a records CSV.
    pub csv_bytes: u64,
    /// Ping-pong events injected.
    pub pings: usize,
}

impl SynthOutput {
    pub fn corpus(&self) -> Corpus {
        Corpus::from_records(self.records.iter().cloned(), self.csv_bytes)
    }

    pub fn write(&self, records_path: &Path, truth_path: &Path) -> Result<(), std::io::Error> {
        write_records(records_path, &self.records)?;
        let mut w = csv::Writer::from_path(truth_path)?;
        w.write_record(["device_id", "place", "lat", "lon", "start", "end"])?;
        for t in &self.truth {
            w.write_record([
                t.device_id.clone(),
                t.place.to_string(),
                t.lat.to_string(),
                t.lon.to_string(),
                t.start.to_string(),
                t.end.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn device_id(index: usize) -> String {
    format!("user{index:05}")
}

/// Moves `p` by metres east and north.
fn offset(p: LatLon, east_m: f64, north_m: f64) -> LatLon {
    let lat = p.lat + north_m / 1000.0 / KM_PER_DEG;
    let lon = p.lon + east_m / 1000.0 / (KM_PER_DEG * p.lat.to_radians().cos());
    LatLon::new(lat, lon)
}

fn polar(rng: &mut ChaCha8Rng, p: LatLon, radius_m: f64) -> LatLon {
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    offset(p, radius_m * angle.cos(), radius_m * angle.sin())
}

/// Uniform point in a disc.
fn in_disc(rng: &mut ChaCha8Rng, center: LatLon, radius_km: f64) -> LatLon {
    let r = radius_km * 1000.0 * rng.random::<f64>().sqrt();
    polar(rng, center, r)
}

struct Place {
    at: LatLon,
    tower: LatLon,
    ping_tower: LatLon,
}

struct UserGen<'a> {
    cfg: &'a SynthConfig,
    rng: ChaCha8Rng,
    id: String,
    places: Vec<Place>,
    gps_noise: Option<Normal<f64>>,
    records: Vec<LocationRecord>,
    truth: Vec<TruthStay>,
    pings: usize,
}

impl<'a> UserGen<'a> {
    fn new(cfg: &'a SynthConfig, index: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(index as u64);
        let home = in_disc(&mut rng, cfg.center, cfg.city_radius_km);
        let mut spots = vec![home];
        let mut attempts = 0;
        while spots.len() < cfg.places_per_user {
            let p = in_disc(&mut rng, home, cfg.activity_radius_km);
            attempts += 1;
            // after many rejections the spacing is relaxed rather than looping forever
            if attempts > 10_000 || spots.iter().all(|q| haversine_km(p, *q) >= cfg.min_place_spacing_km) {
                spots.push(p);
            }
        }
        let places = spots
            .into_iter()
            .map(|at| {
                let tower = polar(&mut rng, at, cfg.cell_noise_m);
                let ping_tower = polar(&mut rng, at, cfg.tower_distance_km * 1000.0);
                Place { at, tower, ping_tower }
            })
            .collect();
        let gps_noise = (cfg.gps_noise_m > 0.0).then(|| Normal::new(0.0, cfg.gps_noise_m).expect("sigma checked"));
        Self {
            cfg,
            rng,
            id: device_id(index),
            places,
            gps_noise,
            records: Vec::new(),
            truth: Vec::new(),
            pings: 0,
        }
    }

    fn push(&mut self, t: i64, p: LatLon, gps: bool) {
        let accuracy = if gps {
            self.rng.random_range(3.0..60.0f64)
        } else {
            self.rng.random_range(100.0..1500.0f64)
        };
        let accuracy = (accuracy * 10.0).round() / 10.0;
        self.records.push(LocationRecord::new(self.id.clone(), t, p.lat, p.lon, accuracy));
    }

    fn noisy(&mut self, p: LatLon) -> LatLon {
        match self.gps_noise {
            Some(n) => {
                let (e, nn) = (n.sample(&mut self.rng), n.sample(&mut self.rng));
                offset(p, e, nn)
            }
            None => p,
        }
    }

    fn step(&mut self, interval: f64) -> i64 {
        (interval * self.rng.random_range(0.5..1.5)).round().max(1.0) as i64
    }

    fn stay(&mut self, place: usize, start: i64, end: i64) {
        let mut times = vec![start];
        let mut t = start + self.step(self.cfg.sample_interval_s);
        while t < end {
            times.push(t);
            t += self.step(self.cfg.sample_interval_s);
        }
        if end > start {
            times.push(end);
        }
        for (k, &t) in times.iter().enumerate() {
            let gps = self.rng.random_bool(self.cfg.gps_fraction);
            if gps {
                let p = self.noisy(self.places[place].at);
                self.push(t, p, true);
                continue;
            }
            self.push(t, self.places[place].tower, false);
            let inner = k > 0 && k + 1 < times.len();
            if inner && self.cfg.osc_rate > 0.0 && self.rng.random_bool(self.cfg.osc_rate) {
                let room = times[k + 1] - t - 1;
                if room >= 1 {
                    let dt = self.rng.random_range(1..=room.min(20));
                    self.push(t + dt, self.places[place].ping_tower, false);
                    self.pings += 1;
                }
            }
        }
        let at = self.places[place].at;
        self.truth.push(TruthStay {
            device_id: self.id.clone(),
            place,
            lat: at.lat,
            lon: at.lon,
            start,
            end,
        });
    }

    fn travel_seconds(&self, from: usize, to: usize) -> i64 {
        let km = haversine_km(self.places[from].at, self.places[to].at);
        ((km / self.cfg.travel_speed_kmh * 3600.0).round() as i64).max(60)
    }

    /// Transient points strictly inside the leg.
    fn travel(&mut self, from: usize, to: usize, depart: i64, arrive: i64) {
        let (a, b) = (self.places[from].at, self.places[to].at);
        let mut t = depart + self.step(self.cfg.travel_sample_interval_s);
        while t < arrive {
            let f = (t - depart) as f64 / (arrive - depart) as f64;
            let p = LatLon::new(a.lat + f * (b.lat - a.lat), a.lon + f * (b.lon - a.lon));
            let gps = self.rng.random_bool(self.cfg.gps_fraction);
            let p = if gps { self.noisy(p) } else { polar(&mut self.rng, p, self.cfg.cell_noise_m) };
            self.push(t, p, gps);
            t += self.step(self.cfg.travel_sample_interval_s);
        }
    }

    fn day(&mut self, day: usize) {
        let start = self.cfg.start_epoch + day as i64 * SECONDS_PER_DAY;
        let end = start + SECONDS_PER_DAY - 1;
        let (lo, hi) = self.cfg.stays_per_day;
        let k = self.rng.random_range(lo..=hi);
        if k == 1 {
            self.stay(0, start, end);
            return;
        }
        let mut depart = start + self.rng.random_range(6 * 3600..9 * 3600);
        self.stay(0, start, depart);
        let mut here = 0;
        for _ in 0..k - 2 {
            let next = self.rng.random_range(1..self.places.len());
            let next = if next == here { 1 + next % (self.places.len() - 1) } else { next };
            let arrive = depart + self.travel_seconds(here, next);
            let dwell = (self.rng.random_range(self.cfg.dwell_min.0..=self.cfg.dwell_min.1) * 60.0).round() as i64;
            let leave = arrive + dwell;
            if leave + self.travel_seconds(next, 0) > end - 1800 {
                break;
            }
            self.travel(here, next, depart, arrive);
            self.stay(next, arrive, leave);
            here = next;
            depart = leave;
        }
        let arrive = depart + self.travel_seconds(here, 0);
        self.travel(here, 0, depart, arrive);
        self.stay(0, arrive, end);
    }
}

fn generate_user(cfg: &SynthConfig, index: usize) -> (Vec<LocationRecord>, Vec<TruthStay>, usize) {
    let mut g = UserGen::new(cfg, index);
    for d in 0..cfg.days {
        g.day(d);
    }
    (g.records, g.truth, g.pings)
}

fn assemble(parts: Vec<(Vec<LocationRecord>, Vec<TruthStay>, usize)>) -> SynthOutput {
    let mut out = SynthOutput {
        csv_bytes: RECORD_COLUMNS.join(",").len() as u64 + 1,
        ..Default::default()
    };
    for (records, truth, pings) in parts {
        out.csv_bytes += records.iter().map(csv_line_len).sum::<u64>();
        out.records.extend(records);
        out.truth.extend(truth);
        out.pings += pings;
    }
    out
}

/// Generates `cfg.users` users. Each user draws from its own stream of the
/// seed, so a user's data does not depend on the user count.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthOutput, SynthError> {
    cfg.validate()?;
    let idx: Vec<usize> = (0..cfg.users).collect();
    Ok(assemble(Executor::default().map(&idx, |&i| generate_user(cfg, i))))
}

/// Adds users until the records CSV reaches `target_bytes`.
pub fn generate_sized(cfg: &SynthConfig, target_bytes: u64) -> Result<SynthOutput, SynthError> {
    cfg.validate()?;
    let exec = Executor::default();
    let mut parts = Vec::new();
    let mut bytes = RECORD_COLUMNS.join(",").len() as u64 + 1;
    let batch = exec.workers().max(1);
    let mut next = 0;
    while bytes < target_bytes {
        let idx: Vec<usize> = (next..next + batch).collect();
        for part in exec.map(&idx, |&i| generate_user(cfg, i)) {
            if bytes >= target_bytes {
                break;
            }
            bytes += part.0.iter().map(csv_line_len).sum::<u64>();
            parts.push(part);
        }
        next += batch;
    }
    Ok(assemble(parts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            users: 3,
            days: 2,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_output() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SynthConfig { seed: 2, ..small() }).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn user_count_and_order() {
        let out = generate_synthetic(&SynthConfig { users: 5, ..small() }).unwrap();
        let corpus = out.corpus();
        assert_eq!(corpus.user_count(), 5);
        assert_eq!(corpus.record_count(), out.records.len(), "no duplicate timestamps");
        let flat: Vec<_> = corpus.records().cloned().collect();
        assert_eq!(flat, out.records);
    }

    #[test]
    fn users_do_not_depend_on_count() {
        let three = generate_synthetic(&small()).unwrap();
        let five = generate_synthetic(&SynthConfig { users: 5, ..small() }).unwrap();
        let first: Vec<_> = five.records.iter().filter(|r| r.device_id != device_id(3) && r.device_id != device_id(4)).cloned().collect();
        assert_eq!(first, three.records);
    }

    #[test]
    fn truth_is_ordered_and_within_days() {
        let out = generate_synthetic(&small()).unwrap();
        for w in out.truth.windows(2) {
            if w[0].device_id == w[1].device_id {
                assert!(w[0].end < w[1].start);
            }
        }
        for t in &out.truth {
            let day = (t.start - 1_551_657_600).div_euclid(SECONDS_PER_DAY);
            assert_eq!((t.end - 1_551_657_600).div_euclid(SECONDS_PER_DAY), day);
        }
    }

    #[test]
    fn pings_are_injected_at_the_rate() {
        let cfg = SynthConfig {
            gps_fraction: 0.0,
            osc_rate: 0.1,
            ..small()
        };
        let out = generate_synthetic(&cfg).unwrap();
        let frac = out.pings as f64 / (out.records.len() - out.pings) as f64;
        assert!(frac > 0.05 && frac < 0.15, "{frac}");
        assert_eq!(generate_synthetic(&small()).unwrap().pings, 0);
    }

    #[test]
    fn sized_reaches_target() {
        let out = generate_sized(&small(), 300_000).unwrap();
        assert!(out.csv_bytes >= 300_000);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        out.write(&p, &dir.path().join("t.csv")).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), out.csv_bytes);
    }

    #[test]
    fn invalid_configs() {
        assert!(SynthConfig { osc_rate: 1.5, ..small() }.validate().is_err());
        assert!(SynthConfig { gps_noise_m: -1.0, ..small() }.validate().is_err());
        assert!(SynthConfig { stays_per_day: (4, 2), ..small() }.validate().is_err());
    }
}
