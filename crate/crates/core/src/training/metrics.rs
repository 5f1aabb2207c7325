use std::io::Write;

use super::TrainError;

pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: &str = "iter,loss_d1,loss_g_adv,loss_g_cls,mean_score,mean_proxy,frac_label10";

/// One evaluation point. Columns a pipeline does not produce are NaN and
/// print as `nan`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub loss_d1: f32,
    pub loss_g_adv: f32,
    pub loss_g_cls: f32,
    pub mean_score: f64,
    pub mean_proxy: f64,
    pub frac_label10: f64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let loss = |v: f32| if v.is_nan() { "nan".to_string() } else { v.to_string() };
        let stat = |v: f64| if v.is_nan() { "nan".to_string() } else { format!("{v:.6}") };
        format!(
            "{},{},{},{},{},{},{}",
            self.iter,
            loss(self.loss_d1),
            loss(self.loss_g_adv),
            loss(self.loss_g_cls),
            stat(self.mean_score),
            stat(self.mean_proxy),
            stat(self.frac_label10)
        )
    }
}

pub fn write_metrics_header(w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRow>, TrainError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == METRICS_HEADER => {}
        _ => {
            return Err(TrainError::Format {
                line: 1,
                message: format!("expected header {METRICS_HEADER}"),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| TrainError::Format { line: i + 1, message };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(err(format!("expected 7 fields, got {}", f.len())));
        }
        let num = |k: usize| f[k].trim().parse::<f64>().map_err(|_| err(format!("bad number {:?}", f[k])));
        rows.push(MetricsRow {
            iter: f[0].trim().parse().map_err(|_| err(format!("bad iteration {:?}", f[0])))?,
            loss_d1: num(1)? as f32,
            loss_g_adv: num(2)? as f32,
            loss_g_cls: num(3)? as f32,
            mean_score: num(4)?,
            mean_proxy: num(5)?,
            frac_label10: num(6)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_round_trip() {
        let row = MetricsRow {
            iter: 12,
            loss_d1: 1.25,
            loss_g_adv: 0.5,
            loss_g_cls: f32::NAN,
            mean_score: 0.75,
            mean_proxy: 0.125,
            frac_label10: 0.5,
        };
        let text = format!("{METRICS_HEADER}\n{}\n", row.to_csv());
        assert!(text.contains(",nan,"));
        let back = parse_metrics(&text).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].iter, 12);
        assert!(back[0].loss_g_cls.is_nan());
        assert_eq!(back[0].mean_score, 0.75);
    }

    #[test]
    fn bad_files_rejected() {
        assert!(parse_metrics("iter,x\n").is_err());
        let bad = format!("{METRICS_HEADER}\n1,2,3\n");
        assert!(matches!(parse_metrics(&bad), Err(TrainError::Format { line: 2, .. })));
    }
}
