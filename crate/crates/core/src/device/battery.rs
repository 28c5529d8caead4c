//! Battery lifetime estimation from a device's duty cycle.
//!
//! Each activity (a periodic report, a downlink poll) is replayed once on an
//! [`EnergyLedger`]: wake in RX, contend, transmit, listen for the ACK, then
//! sleep until the next period. The per-activity average currents are then
//! combined over a shared sleep floor.

use serde::{Deserialize, Serialize};

use super::DeviceError;
use crate::mac::frame::{CRC_LEN, HEADER_LEN};
use crate::mac::{EnergyLedger, EnergyParams, MacTimings, RadioState, COORD_ACK_PAYLOAD};
use crate::rf::airtime_bytes;
use crate::sim::SimTime;

pub const HOURS_PER_YEAR: f64 = 365.25 * 24.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DutyCycle {
    pub report_interval: Option<SimTime>,
    pub report_bytes: usize,
    pub poll_interval: Option<SimTime>,
    pub poll_bytes: usize,
    pub ack_bytes: usize,
    pub rate_bps: f64,
    pub wake_latency: SimTime,
    pub turnaround: SimTime,
    /// Mean listen time spent in CSMA backoff before each transmission.
    pub mean_backoff: SimTime,
    /// Receiver never sleeps (RX between activities instead of SLEEP).
    pub always_listening: bool,
}

impl Default for DutyCycle {
    fn default() -> Self {
        let t = MacTimings::default();
        DutyCycle {
            report_interval: Some(SimTime::from_secs(10)),
            report_bytes: 32,
            poll_interval: None,
            poll_bytes: HEADER_LEN + CRC_LEN,
            ack_bytes: HEADER_LEN + COORD_ACK_PAYLOAD + CRC_LEN,
            rate_bps: 10_000.0,
            wake_latency: t.wake_latency,
            turnaround: t.turnaround,
            mean_backoff: mean_backoff(&t),
            always_listening: false,
        }
    }
}

/// Expected first-attempt backoff: `(W0 - 1) / 2` units.
pub fn mean_backoff(t: &MacTimings) -> SimTime {
    SimTime(t.backoff_unit.as_micros() * (t.initial_window as u64 - 1) / 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifetimeEstimate {
    pub average_current_ma: f64,
    pub lifetime_hours: f64,
}

impl LifetimeEstimate {
    pub fn lifetime_years(&self) -> f64 {
        self.lifetime_hours / HOURS_PER_YEAR
    }
}

/// Average current of one periodic activity, sleep floor included.
fn activity_average(profile: &DutyCycle, params: &EnergyParams, period: SimTime, frame_bytes: usize) -> Result<f64, DeviceError> {
    let rate = profile.rate_bps;
    let tx = airtime_bytes(frame_bytes, rate).map_err(|e| DeviceError::InvalidDutyCycle(e.to_string()))?;
    let ack = airtime_bytes(profile.ack_bytes, rate).map_err(|e| DeviceError::InvalidDutyCycle(e.to_string()))?;
    let idle = if profile.always_listening { RadioState::RxListen } else { RadioState::Sleep };

    let mut ledger = EnergyLedger::new(*params, SimTime::ZERO, RadioState::RxListen);
    let mut t = profile.wake_latency + profile.mean_backoff;
    ledger.transition(t, RadioState::Tx);
    t += tx;
    ledger.transition(t, RadioState::RxListen);
    t += profile.turnaround + ack;
    if t > period {
        return Err(DeviceError::InvalidDutyCycle(format!("active time {t} exceeds period {period}")));
    }
    ledger.transition(t, idle);
    Ok(ledger.average_current_ma(period))
}

pub fn battery_life_estimate(profile: &DutyCycle, params: &EnergyParams) -> Result<LifetimeEstimate, DeviceError> {
    if !(params.battery_capacity_mah > 0.0) {
        return Err(DeviceError::ZeroCapacity);
    }
    let floor = if profile.always_listening { params.rx_current_ma } else { params.sleep_current_ma };
    let mut average = floor;
    if let Some(p) = profile.report_interval {
        average += activity_average(profile, params, p, profile.report_bytes)? - floor;
    }
    if let Some(p) = profile.poll_interval {
        average += activity_average(profile, params, p, profile.poll_bytes)? - floor;
    }
    Ok(LifetimeEstimate {
        average_current_ma: average,
        lifetime_hours: params.battery_capacity_mah / average,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn always_listening_drains_in_about_119_hours() {
        let profile = DutyCycle {
            report_interval: None,
            always_listening: true,
            ..DutyCycle::default()
        };
        let est = battery_life_estimate(&profile, &EnergyParams::default()).unwrap();
        assert_relative_eq!(est.lifetime_hours, 2200.0 / 18.5, max_relative = 1e-12);
        assert_relative_eq!(est.lifetime_hours, 118.9, max_relative = 1e-3);
    }

    #[test]
    fn sleep_only_is_the_upper_bound() {
        let profile = DutyCycle {
            report_interval: None,
            ..DutyCycle::default()
        };
        let est = battery_life_estimate(&profile, &EnergyParams::default()).unwrap();
        assert_relative_eq!(est.lifetime_hours, 2200.0 / 0.0015, max_relative = 1e-12);
    }

    #[test]
    fn zero_capacity_is_rejected() {
        let params = EnergyParams {
            battery_capacity_mah: 0.0,
            ..EnergyParams::default()
        };
        assert_eq!(battery_life_estimate(&DutyCycle::default(), &params), Err(DeviceError::ZeroCapacity));
    }

    #[test]
    fn activity_longer_than_period_is_rejected() {
        let profile = DutyCycle {
            report_interval: Some(SimTime::from_millis(20)),
            ..DutyCycle::default()
        };
        assert!(matches!(
            battery_life_estimate(&profile, &EnergyParams::default()),
            Err(DeviceError::InvalidDutyCycle(_))
        ));
    }

    #[test]
    fn polling_costs_energy() {
        let base = battery_life_estimate(&DutyCycle::default(), &EnergyParams::default()).unwrap();
        let polled = DutyCycle {
            poll_interval: Some(SimTime::from_secs(2)),
            ..DutyCycle::default()
        };
        let est = battery_life_estimate(&polled, &EnergyParams::default()).unwrap();
        assert!(est.lifetime_hours < base.lifetime_hours);
    }
}
