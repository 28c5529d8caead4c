use serde::{Deserialize, Serialize};

use crate::sim::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RadioState {
    Sleep,
    RxListen,
    Tx,
}

impl RadioState {
    fn index(self) -> usize {
        match self {
            RadioState::Sleep => 0,
            RadioState::RxListen => 1,
            RadioState::Tx => 2,
        }
    }
}

/// Current draw per radio state and the battery behind it.
///
/// Sleep current (1.5µA) and the 2×AA pack (2200mAh at 3.0V) are assumed
/// values; the RX/TX currents are the radio's rated figures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyParams {
    pub sleep_current_ma: f64,
    pub rx_current_ma: f64,
    pub tx_current_ma: f64,
    pub battery_capacity_mah: f64,
    pub supply_voltage_v: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams {
            sleep_current_ma: 0.0015,
            rx_current_ma: 18.5,
            tx_current_ma: 85.0,
            battery_capacity_mah: 2200.0,
            supply_voltage_v: 3.0,
        }
    }
}

impl EnergyParams {
    pub fn current_ma(&self, state: RadioState) -> f64 {
        match state {
            RadioState::Sleep => self.sleep_current_ma,
            RadioState::RxListen => self.rx_current_ma,
            RadioState::Tx => self.tx_current_ma,
        }
    }
}

/// Time spent in each radio state since the device was created.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyLedger {
    params: EnergyParams,
    created: SimTime,
    state: RadioState,
    since: SimTime,
    accumulated: [SimTime; 3],
}

impl EnergyLedger {
    pub fn new(params: EnergyParams, created: SimTime, initial: RadioState) -> Self {
        EnergyLedger {
            params,
            created,
            state: initial,
            since: created,
            accumulated: [SimTime::ZERO; 3],
        }
    }

    pub fn params(&self) -> &EnergyParams {
        &self.params
    }

    pub fn state(&self) -> RadioState {
        self.state
    }

    /// Switches to `state` at `now`. Re-entering the current state is a no-op.
    pub fn transition(&mut self, now: SimTime, state: RadioState) {
        if state == self.state {
            return;
        }
        self.settle(now);
        self.state = state;
    }

    /// Books the time spent in the current state up to `now`.
    pub fn settle(&mut self, now: SimTime) {
        let now = now.max(self.since);
        self.accumulated[self.state.index()] += now - self.since;
        self.since = now;
    }

    /// Time in `state` up to `now`, including the open interval.
    pub fn time_in(&self, state: RadioState, now: SimTime) -> SimTime {
        let mut t = self.accumulated[state.index()];
        if state == self.state {
            t += now.saturating_sub(self.since);
        }
        t
    }

    pub fn lifetime(&self, now: SimTime) -> SimTime {
        now.saturating_sub(self.created)
    }

    pub fn consumed_mah(&self, now: SimTime) -> f64 {
        [RadioState::Sleep, RadioState::RxListen, RadioState::Tx]
            .iter()
            .map(|s| self.params.current_ma(*s) * self.time_in(*s, now).as_secs_f64() / 3600.0)
            .sum()
    }

    pub fn consumed_joules(&self, now: SimTime) -> f64 {
        self.consumed_mah(now) * 3.6 * self.params.supply_voltage_v
    }

    pub fn average_current_ma(&self, now: SimTime) -> f64 {
        let life = self.lifetime(now).as_secs_f64();
        if life == 0.0 {
            return self.params.current_ma(self.state);
        }
        self.consumed_mah(now) * 3600.0 / life
    }

    pub fn remaining_fraction(&self, now: SimTime) -> f64 {
        (1.0 - self.consumed_mah(now) / self.params.battery_capacity_mah).clamp(0.0, 1.0)
    }

    /// Projected lifetime in hours at the average current seen so far.
    pub fn projected_lifetime_hours(&self, now: SimTime) -> f64 {
        self.params.battery_capacity_mah / self.average_current_ma(now)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn sleep_then_wake_listen() {
        let mut l = EnergyLedger::new(EnergyParams::default(), SimTime::ZERO, RadioState::Sleep);
        l.transition(SimTime::from_secs(10), RadioState::RxListen);
        let now = SimTime::from_secs(10) + SimTime::from_millis(15);
        assert_eq!(l.time_in(RadioState::Sleep, now), SimTime::from_secs(10));
        assert!(l.time_in(RadioState::RxListen, now) >= SimTime::from_millis(15));
        // 10s at 1.5µA plus 15ms at 18.5mA
        let expected = (0.0015 * 10.0 + 18.5 * 0.015) / 3600.0;
        assert_relative_eq!(l.consumed_mah(now), expected, max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn state_times_sum_to_lifetime(steps in proptest::collection::vec((0u64..5_000_000, 0u8..3), 1..40)) {
            let mut l = EnergyLedger::new(EnergyParams::default(), SimTime::from_micros(7), RadioState::Sleep);
            let mut now = SimTime::from_micros(7);
            let mut last = 0.0;
            for (dt, s) in steps {
                now += SimTime(dt);
                let state = [RadioState::Sleep, RadioState::RxListen, RadioState::Tx][s as usize];
                l.transition(now, state);
                let total = l.time_in(RadioState::Sleep, now) + l.time_in(RadioState::RxListen, now) + l.time_in(RadioState::Tx, now);
                prop_assert_eq!(total, l.lifetime(now));
                let consumed = l.consumed_mah(now);
                prop_assert!(consumed >= last);
                last = consumed;
            }
        }
    }
}
