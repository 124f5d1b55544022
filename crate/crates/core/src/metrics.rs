//! Detection performance of an alarm sequence against a known fault onset.

use serde::{Deserialize, Serialize};

/// Consecutive alarms that count as a sustained detection.
pub const SUSTAIN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    /// Alarm fraction over samples at or after `onset + settle`.
    pub detection_rate: f64,
    /// Alarm fraction over warm samples before the onset.
    pub false_alarm_rate: f64,
    /// Samples from the onset to the start of the first sustained alarm.
    pub detection_delay: Option<usize>,
}

/// `alarms[i]` is `None` for warm-up samples. `onset` is the zero-based
/// index of the first faulty sample.
pub fn summarize(alarms: &[Option<bool>], onset: usize, settle: usize) -> DetectionSummary {
    let rate = |slice: &[Option<bool>]| {
        let warm: Vec<bool> = slice.iter().flatten().copied().collect();
        if warm.is_empty() {
            f64::NAN
        } else {
            warm.iter().filter(|&&a| a).count() as f64 / warm.len() as f64
        }
    };
    let onset = onset.min(alarms.len());
    let from = (onset + settle).min(alarms.len());
    let mut run = 0;
    let mut delay = None;
    for (i, a) in alarms.iter().enumerate().skip(onset) {
        run = if *a == Some(true) { run + 1 } else { 0 };
        if run == SUSTAIN {
            delay = Some(i + 1 - SUSTAIN - onset);
            break;
        }
    }
    DetectionSummary {
        detection_rate: rate(&alarms[from..]),
        false_alarm_rate: rate(&alarms[..onset]),
        detection_delay: delay,
    }
}
