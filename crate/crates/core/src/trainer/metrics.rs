use std::io::{Read, Write};

use crate::data::{LabeledSet, UnlabeledSet};
use crate::error::{arg_err, Error, Result};
use crate::netcore::{forward_probs, Classifier, Network};

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    /// Completed iterations at evaluation time.
    pub iteration: usize,
    pub loss_s: f64,
    pub loss_u: f64,
    pub loss_ac: f64,
    pub test_accuracy: f64,
    pub gamma: f64,
    /// `None` when nothing was admitted (`γ = 0`).
    pub upsilon: Option<f64>,
    pub tau: f64,
    pub lr: f64,
}

pub const METRICS_HEADER: [&str; 9] = [
    "iteration", "loss_s", "loss_u", "loss_ac", "test_acc", "gamma", "upsilon", "tau", "lr",
];

/// Top-1 accuracy; argmax ties go to the lowest class index.
pub fn evaluate(net: &Network, test: &LabeledSet) -> Result<f64> {
    evaluate_with_head(net, &net.classifier, test)
}

pub fn evaluate_with_head(net: &Network, head: &Classifier, test: &LabeledSet) -> Result<f64> {
    if test.is_empty() {
        return arg_err("test set is empty");
    }
    let probs = forward_probs(head, &net.extractor.features(&test.inputs)?)?;
    let correct = test
        .labels
        .iter()
        .enumerate()
        .filter(|&(r, &y)| probs.argmax_row(r) == y)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaUpsilon {
    /// Admitted fraction `|D_τ| / |D_U|`.
    pub gamma: f64,
    /// Correct fraction among admitted, `None` if nothing was admitted.
    pub upsilon: Option<f64>,
    pub admitted: usize,
    pub correct: usize,
}

impl GammaUpsilon {
    pub fn from_counts(total: usize, admitted: usize, correct: usize) -> Self {
        Self {
            gamma: if total == 0 { 0.0 } else { admitted as f64 / total as f64 },
            upsilon: (admitted > 0).then(|| correct as f64 / admitted as f64),
            admitted,
            correct,
        }
    }
}

/// `γ` and `υ` over the whole unlabeled pool, on clean (un-augmented) inputs.
pub fn compute_gamma_upsilon(
    net: &Network,
    unlabeled: &UnlabeledSet,
    tau: f64,
) -> Result<GammaUpsilon> {
    if unlabeled.is_empty() {
        return Ok(GammaUpsilon::from_counts(0, 0, 0));
    }
    let probs = net.probs(&unlabeled.inputs)?;
    let truth = unlabeled.hidden.reveal_for_diagnostics();
    let mut admitted = 0;
    let mut correct = 0;
    for (r, &y) in truth.iter().enumerate() {
        let arg = probs.argmax_row(r);
        if probs[(r, arg)] >= tau {
            admitted += 1;
            correct += usize::from(arg == y);
        }
    }
    Ok(GammaUpsilon::from_counts(unlabeled.len(), admitted, correct))
}

pub fn write_metrics_csv<W: Write>(w: W, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(METRICS_HEADER)?;
    for r in records {
        w.write_record([
            r.iteration.to_string(),
            r.loss_s.to_string(),
            r.loss_u.to_string(),
            r.loss_ac.to_string(),
            r.test_accuracy.to_string(),
            r.gamma.to_string(),
            r.upsilon.map(|u| u.to_string()).unwrap_or_default(),
            r.tau.to_string(),
            r.lr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(r: R) -> Result<Vec<MetricsRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    if rdr.headers()?.iter().ne(METRICS_HEADER) {
        return Err(Error::Format("unexpected metrics CSV header".into()));
    }
    let num = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::Format(format!("bad number `{s}` in metrics CSV")))
    };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.push(MetricsRecord {
            iteration: rec[0]
                .parse()
                .map_err(|_| Error::Format(format!("bad iteration `{}`", &rec[0])))?,
            loss_s: num(&rec[1])?,
            loss_u: num(&rec[2])?,
            loss_ac: num(&rec[3])?,
            test_accuracy: num(&rec[4])?,
            gamma: num(&rec[5])?,
            upsilon: if rec[6].is_empty() { None } else { Some(num(&rec[6])?) },
            tau: num(&rec[7])?,
            lr: num(&rec[8])?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::HiddenLabels;
    use crate::netcore::{Affine, Matrix};

    fn constant_net(bias: [f64; 2]) -> Network {
        let mut rng = crate::rng::stream_rng(0, crate::rng::Stream::Init);
        let mut n =
            Network::xavier(&[1, 2], crate::netcore::Activation::Tanh, 2, &mut rng).unwrap();
        n.classifier = Affine {
            weight: Matrix::zeros(2, 2),
            bias: Matrix::column_vector(&bias),
        };
        n
    }

    #[test]
    fn always_class_zero_gets_half() {
        let net = constant_net([1.0, 0.0]);
        let test = LabeledSet {
            inputs: Matrix::zeros(4, 1),
            labels: vec![0, 1, 0, 1],
        };
        assert_eq!(evaluate(&net, &test).unwrap(), 0.5);
        let empty = LabeledSet {
            inputs: Matrix::zeros(0, 1),
            labels: vec![],
        };
        assert!(evaluate(&net, &empty).is_err());
    }

    #[test]
    fn ties_break_to_lowest_class() {
        let net = constant_net([0.0, 0.0]);
        let test = LabeledSet {
            inputs: Matrix::zeros(2, 1),
            labels: vec![0, 0],
        };
        assert_eq!(evaluate(&net, &test).unwrap(), 1.0);
    }

    #[test]
    fn gamma_upsilon_arithmetic() {
        let g = GammaUpsilon::from_counts(100, 60, 45);
        assert_eq!(g.gamma, 0.6);
        assert_eq!(g.upsilon, Some(0.75));
        assert_eq!(GammaUpsilon::from_counts(100, 0, 0).upsilon, None);
    }

    #[test]
    fn bounded_confidence_admits_nothing_near_one() {
        let net = constant_net([0.5, 0.0]);
        let u = UnlabeledSet {
            inputs: Matrix::zeros(10, 1),
            hidden: HiddenLabels::new(vec![0; 10]),
        };
        let g = compute_gamma_upsilon(&net, &u, 1.0 - 1e-6).unwrap();
        assert_eq!(g.gamma, 0.0);
        assert_eq!(g.upsilon, None);
        let g = compute_gamma_upsilon(&net, &u, 0.5).unwrap();
        assert_eq!(g.gamma, 1.0);
        assert_eq!(g.upsilon, Some(1.0));
    }

    #[test]
    fn metrics_csv_round_trip_with_absent_upsilon() {
        let recs = vec![
            MetricsRecord {
                iteration: 10,
                loss_s: 0.5,
                loss_u: 0.0,
                loss_ac: 0.0,
                test_accuracy: 0.75,
                gamma: 0.0,
                upsilon: None,
                tau: 0.95,
                lr: 0.03,
            },
            MetricsRecord {
                iteration: 20,
                loss_s: 0.25,
                loss_u: 0.125,
                loss_ac: 0.1,
                test_accuracy: 0.875,
                gamma: 0.5,
                upsilon: Some(0.9),
                tau: 0.95,
                lr: 0.02,
            },
        ];
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("iteration,loss_s,loss_u,loss_ac,test_acc,gamma,upsilon,tau,lr\n"));
        assert!(text.contains("0.75,0,,0.95"));
        assert_eq!(read_metrics_csv(&buf[..]).unwrap(), recs);
    }
}
