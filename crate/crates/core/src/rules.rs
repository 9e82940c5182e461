//! Static threshold detector used as the comparison baseline.
//!
//! Per channel: a band `mean ± band_sigmas·σ` and a rate limit
//! `rate_sigmas·σ_diff` on the absolute sample-to-sample change, both fitted on
//! raw calibration windows. A window is flagged iff any sample leaves its band
//! or any step exceeds its rate limit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::WindowFrame;

pub const DEFAULT_BAND_SIGMAS: f64 = 3.0;
pub const DEFAULT_RATE_SIGMAS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleMultipliers {
    pub band_sigmas: f64,
    pub rate_sigmas: f64,
}

impl Default for RuleMultipliers {
    fn default() -> Self {
        RuleMultipliers {
            band_sigmas: DEFAULT_BAND_SIGMAS,
            rate_sigmas: DEFAULT_RATE_SIGMAS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRule {
    pub channel: String,
    pub lower: f64,
    pub upper: f64,
    pub max_step: f64,
    /// Floor applied to the band half-width and to `max_step`.
    pub min_band: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub rules: Vec<ChannelRule>,
    pub multipliers: RuleMultipliers,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    LowerBound,
    UpperBound,
    Rate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiredRule {
    pub channel: String,
    pub kind: RuleKind,
    pub sample_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleVerdict {
    pub label: u8,
    pub fired: Vec<FiredRule>,
    /// Largest violation ratio over all rules: `|x − mid| / half_width` for
    /// bands and `|Δx| / max_step` for rates. A rule fires iff its ratio
    /// exceeds 1, so `label == 1` iff `score > 1`. Used as the continuous
    /// score for ROC analysis.
    pub score: f64,
}

fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64, usize) {
    // Welford
    let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
    for x in values {
        n += 1;
        let delta = x - mean;
        mean += delta / n as f64;
        m2 += delta * (x - mean);
    }
    let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
    (mean, var.sqrt(), n)
}

pub fn default_min_band(mean: f64) -> f64 {
    1e-6 * mean.abs() + 1e-9
}

pub fn fit_rules(calibration: &[WindowFrame], channels: &[String], multipliers: RuleMultipliers) -> Result<RuleSet> {
    let first = calibration
        .first()
        .ok_or_else(|| Error::Calibration("rule fitting needs at least one calibration window".into()))?;
    if first.channels != channels.len() {
        return Err(Error::dim(channels.len(), first.channels, "rule channels"));
    }
    if calibration.iter().any(|w| w.channels != first.channels) {
        return Err(Error::Calibration("calibration windows disagree on channel count".into()));
    }
    let mut rules = Vec::with_capacity(channels.len());
    for (ch, name) in channels.iter().enumerate() {
        let (mean, sd, _) = mean_std(calibration.iter().flat_map(|w| w.row(ch).iter().copied()));
        let (_, sd_diff, _) = mean_std(
            calibration
                .iter()
                .flat_map(|w| w.row(ch).windows(2).map(|p| p[1] - p[0])),
        );
        let min_band = default_min_band(mean);
        let half = (multipliers.band_sigmas * sd).max(min_band);
        rules.push(ChannelRule {
            channel: name.clone(),
            lower: mean - half,
            upper: mean + half,
            max_step: (multipliers.rate_sigmas * sd_diff).max(min_band),
            min_band,
        });
    }
    Ok(RuleSet { rules, multipliers })
}

pub fn rule_detect(window: &WindowFrame, rules: &RuleSet) -> Result<RuleVerdict> {
    if window.channels != rules.rules.len() {
        return Err(Error::Schema(format!(
            "window has {} channels but rules cover {}",
            window.channels,
            rules.rules.len()
        )));
    }
    let mut fired = Vec::new();
    let mut score = 0.0f64;
    for (ch, rule) in rules.rules.iter().enumerate() {
        let row = window.row(ch);
        let mid = 0.5 * (rule.lower + rule.upper);
        let half = 0.5 * (rule.upper - rule.lower);
        for (i, &x) in row.iter().enumerate() {
            score = score.max((x - mid).abs() / half);
            if x < rule.lower {
                fired.push(FiredRule {
                    channel: rule.channel.clone(),
                    kind: RuleKind::LowerBound,
                    sample_index: i,
                });
            } else if x > rule.upper {
                fired.push(FiredRule {
                    channel: rule.channel.clone(),
                    kind: RuleKind::UpperBound,
                    sample_index: i,
                });
            }
        }
        for (i, pair) in row.windows(2).enumerate() {
            let step = (pair[1] - pair[0]).abs();
            score = score.max(step / rule.max_step);
            if step > rule.max_step {
                fired.push(FiredRule {
                    channel: rule.channel.clone(),
                    kind: RuleKind::Rate,
                    sample_index: i + 1,
                });
            }
        }
    }
    Ok(RuleVerdict {
        label: u8::from(!fired.is_empty()),
        fired,
        score,
    })
}

/// Looks up a rule set by channel name, reordering to `channels`.
pub fn reorder(rules: &RuleSet, channels: &[String]) -> Result<RuleSet> {
    let picked = channels
        .iter()
        .map(|c| {
            rules
                .rules
                .iter()
                .find(|r| &r.channel == c)
                .cloned()
                .ok_or_else(|| Error::Schema(format!("no rule for channel {c}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RuleSet {
        rules: picked,
        multipliers: rules.multipliers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    fn simple_rules() -> RuleSet {
        RuleSet {
            rules: vec![ChannelRule {
                channel: "v".into(),
                lower: 7.0,
                upper: 13.0,
                max_step: 2.0,
                min_band: 1e-9,
            }],
            multipliers: RuleMultipliers::default(),
        }
    }

    #[test]
    fn quiet_window_passes() {
        let w = WindowFrame::from_rows("s", 0, &[vec![10.0, 10.5, 11.0, 10.2]]).unwrap();
        let v = rule_detect(&w, &simple_rules()).unwrap();
        assert_eq!((v.label, v.fired.len()), (0, 0));
        assert!(v.score <= 1.0);
    }

    #[test]
    fn band_and_rate_violations() {
        let w = WindowFrame::from_rows("s", 0, &[vec![10.0, 10.0, 15.0, 10.0]]).unwrap();
        let v = rule_detect(&w, &simple_rules()).unwrap();
        assert_eq!(v.label, 1);
        assert!(v.fired.contains(&FiredRule { channel: "v".into(), kind: RuleKind::UpperBound, sample_index: 2 }));
        assert!(v.fired.contains(&FiredRule { channel: "v".into(), kind: RuleKind::Rate, sample_index: 2 }));
        assert!(v.score > 1.0);

        let low = WindowFrame::from_rows("s", 0, &[vec![6.5, 6.5]]).unwrap();
        let v = rule_detect(&low, &simple_rules()).unwrap();
        assert_eq!(v.fired[0].kind, RuleKind::LowerBound);
    }

    #[test]
    fn constant_channel_gets_floor_band() {
        let w = WindowFrame::from_rows("s", 0, &[vec![5.0; 6], vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]]).unwrap();
        let rs = fit_rules(&[w], &names(&["a", "b"]), RuleMultipliers::default()).unwrap();
        let delta = default_min_band(5.0);
        assert_eq!(rs.rules[0].lower, 5.0 - delta);
        assert_eq!(rs.rules[0].upper, 5.0 + delta);
        assert_eq!(rs.rules[0].max_step, delta);
        // second channel fitted on its own data
        assert!(rs.rules[1].upper > 2.0 && rs.rules[1].lower < 1.0);
    }

    #[test]
    fn unknown_channel_layout_is_error() {
        let w = WindowFrame::from_rows("s", 0, &[vec![1.0], vec![1.0]]).unwrap();
        assert!(rule_detect(&w, &simple_rules()).is_err());
        assert!(fit_rules(&[], &names(&["a"]), RuleMultipliers::default()).is_err());
        assert!(reorder(&simple_rules(), &names(&["q"])).is_err());
    }
}
