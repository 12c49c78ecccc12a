//! Metrics rows shared by every trainer.

pub const METRICS_HEADER: &str =
    "step,eval_return_mean,eval_return_std,disc_loss,critic_loss,actor_loss,reward_mean";

#[derive(Debug, Clone, Copy)]
pub struct MetricsRow {
    pub step: usize,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    pub disc_loss: f64,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub reward_mean: f64,
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.eval_return_mean,
            self.eval_return_std,
            self.disc_loss,
            self.critic_loss,
            self.actor_loss,
            self.reward_mean
        )
    }

    pub fn parse_csv_line(line: &str) -> Option<MetricsRow> {
        let mut parts = line.split(',');
        let step = parts.next()?.trim().parse().ok()?;
        let mut next_f64 = || -> Option<f64> { parts.next()?.trim().parse().ok() };
        Some(MetricsRow {
            step,
            eval_return_mean: next_f64()?,
            eval_return_std: next_f64()?,
            disc_loss: next_f64()?,
            critic_loss: next_f64()?,
            actor_loss: next_f64()?,
            reward_mean: next_f64()?,
        })
    }
}

pub fn metrics_to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}

pub fn parse_metrics_csv(text: &str) -> Vec<MetricsRow> {
    text.lines()
        .skip(1)
        .filter_map(MetricsRow::parse_csv_line)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            MetricsRow {
                step: 100,
                eval_return_mean: 1.5,
                eval_return_std: 0.25,
                disc_loss: f64::NAN,
                critic_loss: 0.01,
                actor_loss: -2.0,
                reward_mean: 0.7,
            },
            MetricsRow {
                step: 200,
                eval_return_mean: 2.5,
                eval_return_std: 0.5,
                disc_loss: 1.2,
                critic_loss: 0.02,
                actor_loss: -1.0,
                reward_mean: 0.9,
            },
        ];
        let text = metrics_to_csv(&rows);
        let back = parse_metrics_csv(&text);
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].step, 100);
        assert!(back[0].disc_loss.is_nan());
        assert_eq!(back[1].eval_return_mean, 2.5);
    }
}
