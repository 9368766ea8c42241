//! Bank of MPC controllers with per-instant argmin-objective selection.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpc::{MpcController, Plan, PlanStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyncMode {
    /// Each filter tracks the common (u, y) stream on its own.
    #[default]
    KalmanOnly,
    /// Unselected estimates are overwritten with the selected one.
    StateCopy,
}

#[derive(Debug, Clone)]
pub struct BankEntry {
    pub id: String,
    pub controller: MpcController,
}

/// Result of one bank step.
#[derive(Debug, Clone)]
pub struct BankStep {
    pub u: DVector<f64>,
    /// Index of the selected entry, `None` if every entry failed.
    pub selected: Option<usize>,
    /// Objective per entry; `None` for entries excluded this instant.
    pub j_values: Vec<Option<f64>>,
    pub plans: Vec<Option<Plan>>,
    pub warnings: Vec<String>,
}

impl BankStep {
    pub fn selected_plan(&self) -> Option<&Plan> {
        self.selected.and_then(|i| self.plans[i].as_ref())
    }
}

#[derive(Debug, Clone)]
pub struct ModelBank {
    entries: Vec<BankEntry>,
    sync_mode: SyncMode,
    /// Relative margin a challenger must beat the incumbent by; 0 disables.
    hysteresis: f64,
    selection_log: Vec<Option<usize>>,
}

impl ModelBank {
    pub fn new(entries: Vec<BankEntry>, sync_mode: SyncMode) -> Result<Self> {
        let first = entries
            .first()
            .ok_or_else(|| Error::Config("model bank needs at least one entry".into()))?;
        let c0 = &first.controller;
        let m0 = c0.model();
        for e in &entries[1..] {
            let c = &e.controller;
            let m = c.model();
            if m.n_inputs() != m0.n_inputs() || m.n_outputs() != m0.n_outputs() {
                return Err(Error::Config(format!("bank entry '{}' has different input/output counts", e.id)));
            }
            if m.ts() != m0.ts() {
                return Err(Error::Config(format!("bank entry '{}' has a different sampling interval", e.id)));
            }
            if c.config() != c0.config() {
                return Err(Error::Config(format!("bank entry '{}' has a different controller configuration", e.id)));
            }
            if sync_mode == SyncMode::StateCopy && m.order() != m0.order() {
                return Err(Error::Config(format!(
                    "state-copy synchronization needs equal model orders ('{}' has {}, '{}' has {})",
                    first.id,
                    m0.order(),
                    e.id,
                    m.order()
                )));
            }
        }
        Ok(ModelBank {
            entries,
            sync_mode,
            hysteresis: 0.0,
            selection_log: Vec::new(),
        })
    }

    pub fn with_hysteresis(mut self, margin: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&margin) {
            return Err(Error::Config("hysteresis margin must lie in [0, 1)".into()));
        }
        self.hysteresis = margin;
        Ok(self)
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }
    pub fn len(&self) -> usize {
        self.entries.len()
    }
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
    pub fn sync_mode(&self) -> SyncMode {
        self.sync_mode
    }
    pub fn selection_log(&self) -> &[Option<usize>] {
        &self.selection_log
    }

    /// Fraction of logged instants at which each entry was selected.
    pub fn selection_frequency(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.entries.len()];
        for i in self.selection_log.iter().flatten() {
            counts[*i] += 1;
        }
        let total = self.selection_log.len().max(1) as f64;
        counts.into_iter().map(|c| c as f64 / total).collect()
    }

    fn select(&self, j_values: &[Option<f64>]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, j) in j_values.iter().enumerate() {
            if let Some(j) = *j {
                if best.is_none_or(|(_, b)| j < b) {
                    best = Some((i, j));
                }
            }
        }
        let (winner, j_best) = best?;
        if self.hysteresis > 0.0 {
            if let Some(Some(prev)) = self.selection_log.last() {
                if let Some(j_prev) = j_values[*prev] {
                    if j_best >= (1.0 - self.hysteresis) * j_prev {
                        return Some(*prev);
                    }
                }
            }
        }
        Some(winner)
    }

    /// Every controller plans from the common measurement, the argmin
    /// objective wins, every controller commits the applied input.
    pub fn step(&mut self, y_k: &DVector<f64>, reference: &DVector<f64>) -> Result<BankStep> {
        let mut plans = Vec::with_capacity(self.entries.len());
        let mut warnings = Vec::new();
        for e in &self.entries {
            let plan = e.controller.plan(y_k, reference)?;
            for w in &plan.warnings {
                warnings.push(format!("{}: {w}", e.id));
            }
            plans.push(plan);
        }
        let j_values: Vec<Option<f64>> = plans
            .iter()
            .map(|p| (p.status != PlanStatus::Held).then_some(p.j_opt))
            .collect();
        let selected = self.select(&j_values);
        let u = match selected {
            Some(i) => plans[i].u.clone(),
            None => {
                warnings.push("no controller produced a move; holding previous input".into());
                self.entries[0].controller.u_prev().clone()
            }
        };
        for (e, plan) in self.entries.iter_mut().zip(&plans) {
            e.controller.commit(plan, &u)?;
        }
        if let Some(s) = selected {
            self.synchronize(s)?;
        }
        self.selection_log.push(selected);
        Ok(BankStep {
            u,
            selected,
            j_values,
            plans: plans.into_iter().map(Some).collect(),
            warnings,
        })
    }

    /// Applies the configured synchronization after a selection.
    pub fn synchronize(&mut self, selected: usize) -> Result<()> {
        if selected >= self.entries.len() {
            return Err(Error::InvalidArgument(format!("no bank entry {selected}")));
        }
        if self.sync_mode == SyncMode::StateCopy {
            let x = self.entries[selected].controller.xhat().clone();
            for (i, e) in self.entries.iter_mut().enumerate() {
                if i != selected {
                    e.controller.set_xhat(x.clone())?;
                }
            }
        }
        Ok(())
    }
}
