use std::sync::{Arc, Mutex};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::{hstack, optim::polyak_update, Arch, Net, Tape};
use crate::error::{Error, Result};

/// Shared log of every action row at which a critic was evaluated.
pub type ActionProbe = Arc<Mutex<Vec<Vec<f64>>>>;

/// `n` independently initialized Q-networks on `state ⊕ action`, each paired
/// with a delayed (polyak-averaged) target copy.
#[derive(Debug, Clone)]
pub struct CriticEnsemble {
    members: Vec<Net>,
    targets: Vec<Net>,
    state_dim: usize,
    probe: Option<ActionProbe>,
}

impl PartialEq for CriticEnsemble {
    fn eq(&self, other: &Self) -> bool {
        self.members == other.members && self.targets == other.targets
    }
}

impl CriticEnsemble {
    pub fn new<R: Rng + ?Sized>(
        arch: &Arch,
        state_dim: usize,
        n: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n < 1 {
            return Err(Error::invalid("critic ensemble needs at least one member"));
        }
        if arch.output_dim() != 1 || arch.input_dim() <= state_dim {
            return Err(Error::invalid(format!(
                "critic architecture must map state ⊕ action to a scalar, got {arch:?}"
            )));
        }
        let members: Vec<Net> = (0..n).map(|_| Net::new(arch, rng)).collect();
        let targets = members.clone();
        Ok(Self {
            members,
            targets,
            state_dim,
            probe: None,
        })
    }

    pub fn from_parts(members: Vec<Net>, targets: Vec<Net>, state_dim: usize) -> Result<Self> {
        if members.is_empty() || members.len() != targets.len() {
            return Err(Error::invalid(
                "online and target ensembles must be non-empty and equal in size",
            ));
        }
        for (m, t) in members.iter().zip(&targets) {
            if m.arch() != t.arch() {
                return Err(Error::invalid("online/target architecture mismatch"));
            }
        }
        Ok(Self {
            members,
            targets,
            state_dim,
            probe: None,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.members[0].input_dim() - self.state_dim
    }

    pub fn members(&self) -> &[Net] {
        &self.members
    }

    pub fn member_mut(&mut self, i: usize) -> &mut Net {
        &mut self.members[i]
    }

    pub fn targets(&self) -> &[Net] {
        &self.targets
    }

    /// Starts recording every action row passed to a critic evaluation.
    pub fn attach_probe(&mut self) -> ActionProbe {
        let probe = ActionProbe::default();
        self.probe = Some(probe.clone());
        probe
    }

    pub fn detach_probe(&mut self) {
        self.probe = None;
    }

    fn record(&self, actions: &ArrayView2<f64>) {
        if let Some(p) = &self.probe {
            let mut log = p.lock().unwrap();
            log.extend(actions.rows().into_iter().map(|r| r.to_vec()));
        }
    }

    fn inputs(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array2<f64>> {
        if states.ncols() != self.state_dim
            || actions.ncols() != self.action_dim()
            || states.nrows() != actions.nrows()
        {
            return Err(Error::invalid(format!(
                "critic input shapes {:?} / {:?} do not match state {} + action {}",
                states.shape(),
                actions.shape(),
                self.state_dim,
                self.action_dim()
            )));
        }
        self.record(&actions);
        Ok(hstack(states, actions))
    }

    fn eval(net: &Net, x: &Array2<f64>) -> Result<Array1<f64>> {
        Ok(net.forward(x.view())?.column(0).to_owned())
    }

    /// Online member `i`.
    pub fn q(
        &self,
        i: usize,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
    ) -> Result<Array1<f64>> {
        let x = self.inputs(states, actions)?;
        Self::eval(&self.members[i], &x)
    }

    /// All online members; column `i` is member `i`.
    pub fn q_all(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array2<f64>> {
        let x = self.inputs(states, actions)?;
        Self::stack(&self.members, &x)
    }

    /// All target members; column `i` is target `i`.
    pub fn q_all_target(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        let x = self.inputs(states, actions)?;
        Self::stack(&self.targets, &x)
    }

    fn stack(nets: &[Net], x: &Array2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((x.nrows(), nets.len()));
        for (i, n) in nets.iter().enumerate() {
            out.column_mut(i).assign(&Self::eval(n, x)?);
        }
        Ok(out)
    }

    /// Forward pass of online member `i` keeping intermediates.
    pub fn q_tape(
        &self,
        i: usize,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
    ) -> Result<(Array1<f64>, Tape)> {
        let x = self.inputs(states, actions)?;
        let (y, tape) = self.members[i].forward_tape(x.view())?;
        Ok((y.column(0).to_owned(), tape))
    }

    /// Gradients of `Σ_b upstream_b · Q_i(s_b, a_b)` w.r.t. member `i`'s
    /// parameters and w.r.t. the actions.
    pub fn q_backward(
        &self,
        i: usize,
        tape: &Tape,
        upstream: ArrayView1<f64>,
    ) -> Result<(Vec<f64>, Array2<f64>)> {
        let up = upstream.insert_axis(Axis(1));
        let g = self.members[i].backward(tape, up)?;
        let da = g.input.slice(s![.., self.state_dim..]).to_owned();
        Ok((g.params, da))
    }

    pub fn polyak_update(&mut self, rho: f64) {
        for (t, m) in self.targets.iter_mut().zip(&self.members) {
            polyak_update(t.params_mut(), m.params(), rho);
            if let Net::Modern(_) = m {
                // spectral estimates follow the online network
                t.set_buffers(&m.buffers()).expect("matching architectures");
            }
        }
    }

    pub fn refresh_spectral(&mut self) {
        for m in &mut self.members {
            m.refresh_spectral();
        }
    }
}
