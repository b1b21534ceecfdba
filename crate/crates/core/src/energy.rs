//! Battery model and power-zone classification.
//!
//! Charge lives on a 0–10 scale, the same scale the repair score adds to hop
//! counts. Drain is linear per transmitted frame, per received frame and per
//! idle second, clamped at zero.

use thiserror::Error;

use crate::kernel::SimTime;

/// Full charge on the 0–10 power-status scale.
pub const MAX_CHARGE: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("battery level {0} outside [0, {MAX_CHARGE}]")]
    LevelOutOfRange(f64),
    #[error("zone thresholds must satisfy 0 <= danger_max ({danger_max}) <= active_min ({active_min}) <= {MAX_CHARGE}")]
    BadThresholds { active_min: f64, danger_max: f64 },
}

/// Power zone of a node. Ordered from least to most active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PowerZone {
    Danger,
    Critical,
    Active,
}

impl PowerZone {
    pub fn as_str(self) -> &'static str {
        match self {
            PowerZone::Danger => "danger",
            PowerZone::Critical => "critical",
            PowerZone::Active => "active",
        }
    }
}

/// `Active` iff `level >= active_min`; `Danger` iff `level < danger_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneThresholds {
    pub active_min: f64,
    pub danger_max: f64,
}

impl Default for ZoneThresholds {
    fn default() -> Self {
        ZoneThresholds {
            active_min: 5.0,
            danger_max: 2.0,
        }
    }
}

impl ZoneThresholds {
    pub fn new(active_min: f64, danger_max: f64) -> Result<Self, EnergyError> {
        let ok = (0.0..=MAX_CHARGE).contains(&danger_max)
            && (0.0..=MAX_CHARGE).contains(&active_min)
            && danger_max <= active_min;
        if ok {
            Ok(ZoneThresholds {
                active_min,
                danger_max,
            })
        } else {
            Err(EnergyError::BadThresholds {
                active_min,
                danger_max,
            })
        }
    }

    /// Zone lookup without the range check, for levels already known valid.
    pub fn zone_of(&self, level: f64) -> PowerZone {
        if level >= self.active_min {
            PowerZone::Active
        } else if level < self.danger_max {
            PowerZone::Danger
        } else {
            PowerZone::Critical
        }
    }
}

pub fn classify_zone(level: f64, thresholds: &ZoneThresholds) -> Result<PowerZone, EnergyError> {
    if !(0.0..=MAX_CHARGE).contains(&level) {
        return Err(EnergyError::LevelOutOfRange(level));
    }
    Ok(thresholds.zone_of(level))
}

/// Radio activity that costs charge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activity {
    Tx,
    Rx,
    Idle(SimTime),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrainRates {
    /// Units per transmitted frame.
    pub tx: f64,
    /// Units per received (or overheard) frame.
    pub rx: f64,
    /// Units per second of elapsed time.
    pub idle_per_s: f64,
}

impl Default for DrainRates {
    fn default() -> Self {
        DrainRates {
            tx: 0.0001,
            rx: 0.00002,
            idle_per_s: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Battery {
    level: f64,
    rates: DrainRates,
}

impl Battery {
    pub fn new(level: f64, rates: DrainRates) -> Result<Self, EnergyError> {
        if !(0.0..=MAX_CHARGE).contains(&level) {
            return Err(EnergyError::LevelOutOfRange(level));
        }
        Ok(Battery { level, rates })
    }

    pub fn full(rates: DrainRates) -> Self {
        Battery {
            level: MAX_CHARGE,
            rates,
        }
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn rates(&self) -> DrainRates {
        self.rates
    }

    /// The value added into the repair score: the level itself.
    pub fn power_status(&self) -> f64 {
        self.level
    }

    pub fn is_depleted(&self) -> bool {
        self.level <= 0.0
    }

    pub fn zone(&self, thresholds: &ZoneThresholds) -> PowerZone {
        thresholds.zone_of(self.level)
    }

    pub fn apply_drain(&mut self, activity: Activity) {
        let cost = match activity {
            Activity::Tx => self.rates.tx,
            Activity::Rx => self.rates.rx,
            Activity::Idle(dt) => self.rates.idle_per_s * dt.as_secs_f64(),
        };
        self.level = (self.level - cost.max(0.0)).max(0.0);
    }

    /// Consuming form of [`Battery::apply_drain`].
    pub fn drained(mut self, activity: Activity) -> Battery {
        self.apply_drain(activity);
        self
    }
}

pub fn power_status(battery: &Battery) -> f64 {
    battery.power_status()
}
