//! Append-only tab-separated training log.

use std::io::Write;

use cntm_core::trainer::{EpochRecord, StepRecord, TrainObserver};

pub const HEADER: &str = "kind\tstep\tepoch\tlr\ttrain_loss\tgrad_norm\tdev_loss\tdev_accuracy\tskipped";

/// Writes one line per step and per epoch, flushing after each. The first
/// write error is kept and later writes are dropped.
pub struct MetricsLog<W: Write> {
    out: W,
    error: Option<std::io::Error>,
}

impl<W: Write> MetricsLog<W> {
    pub fn new(mut out: W) -> Self {
        let error = writeln!(out, "{HEADER}").and_then(|_| out.flush()).err();
        MetricsLog { out, error }
    }

    fn line(&mut self, text: String) {
        if self.error.is_none() {
            self.error = writeln!(self.out, "{text}").and_then(|_| self.out.flush()).err();
        }
    }

    pub fn finish(self) -> std::io::Result<W> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(self.out),
        }
    }
}

impl<W: Write, T> TrainObserver<T> for MetricsLog<W> {
    fn on_step(&mut self, r: &StepRecord) {
        log::debug!("step {} lr {:.6} loss {:.4}", r.step, r.lr, r.train_loss);
        self.line(format!(
            "step\t{}\t{}\t{:e}\t{}\t{}\t-\t-\t{}",
            r.step,
            r.epoch,
            r.lr,
            r.train_loss,
            r.grad_norm,
            r.skipped.len()
        ));
    }

    fn on_epoch(&mut self, r: &EpochRecord) {
        log::info!(
            "epoch {} step {} train {:.4} dev loss {:.4} acc {:.4}",
            r.epoch,
            r.step,
            r.train_loss,
            r.dev.loss,
            r.dev.accuracy
        );
        self.line(format!(
            "epoch\t{}\t{}\t-\t{}\t-\t{}\t{}\t{}",
            r.step, r.epoch, r.train_loss, r.dev.loss, r.dev.accuracy, r.dev.skipped
        ));
    }
}
