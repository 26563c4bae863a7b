//! Scalable time source shared by the scheduler and the synthetic agent.
//!
//! A clock with `scale = 10` runs ten simulated seconds per real second. All
//! timestamps and poll intervals are in simulated time; only network timeouts
//! stay in real time.

use std::time::{Duration, SystemTime, UNIX_EPOCH};

use tokio::time::Instant;

#[derive(Debug, Clone, Copy)]
pub struct Clock {
    start: Instant,
    origin_ms: u64,
    scale: f64,
}

impl Clock {
    /// Real time, anchored at the current wall-clock time.
    pub fn system() -> Self {
        Self::scaled(1.0)
    }

    pub fn scaled(scale: f64) -> Self {
        let origin_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        Self::with_origin(origin_ms, scale)
    }

    /// Clock reading `origin_ms` now. Panics unless `scale` is positive and finite.
    pub fn with_origin(origin_ms: u64, scale: f64) -> Self {
        assert!(scale.is_finite() && scale > 0.0, "clock scale must be positive");
        Self { start: Instant::now(), origin_ms, scale }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn now_ms(&self) -> u64 {
        self.origin_ms + self.elapsed_ms()
    }

    /// Simulated milliseconds since the clock was created.
    pub fn elapsed_ms(&self) -> u64 {
        (self.start.elapsed().as_secs_f64() * self.scale * 1000.0) as u64
    }

    /// Real duration covering `sim` of simulated time.
    pub fn real(&self, sim: Duration) -> Duration {
        sim.div_f64(self.scale)
    }

    /// Real instant at which the clock will have advanced `sim_ms` past its start.
    pub fn instant_at(&self, sim_ms: u64) -> Instant {
        self.start + self.real(Duration::from_millis(sim_ms))
    }
}
