use std::sync::Arc;

use super::{stack, CompiledNet, NetError, ReluNetwork, Result};

/// One stage of a [`NetChain`]: a network applied `repeat` times in a row.
#[derive(Clone, Debug)]
pub struct ChainStage {
    pub net: Arc<ReluNetwork>,
    pub compiled: Arc<CompiledNet>,
    pub repeat: usize,
}

/// A composition `stage_n^{r_n} ∘ ... ∘ stage_1^{r_1}` kept in factored form.
/// Size and depth are those of the materialized (stacked) network.
#[derive(Clone, Debug, Default)]
pub struct NetChain {
    stages: Vec<ChainStage>,
}

impl NetChain {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, net: Arc<ReluNetwork>, repeat: usize) -> Result<()> {
        let compiled = Arc::new(CompiledNet::new(&net));
        self.push_compiled(net, compiled, repeat)
    }

    pub fn push_compiled(&mut self, net: Arc<ReluNetwork>, compiled: Arc<CompiledNet>, repeat: usize) -> Result<()> {
        if repeat == 0 {
            return Ok(());
        }
        if repeat > 1 && net.in_dim() != net.out_dim() {
            return Err(NetError::Invalid("repeated stage must map R^n to R^n".into()));
        }
        if let Some(last) = self.stages.last() {
            if last.net.out_dim() != net.in_dim() {
                return Err(NetError::DimensionMismatch { expected: last.net.out_dim(), got: net.in_dim() });
            }
        }
        self.stages.push(ChainStage { net, compiled, repeat });
        Ok(())
    }

    pub fn stages(&self) -> &[ChainStage] {
        &self.stages
    }

    pub fn in_dim(&self) -> usize {
        self.stages.first().map_or(0, |s| s.net.in_dim())
    }

    pub fn out_dim(&self) -> usize {
        self.stages.last().map_or(0, |s| s.net.out_dim())
    }

    pub fn size(&self) -> u64 {
        self.stages.iter().map(|s| s.repeat as u64 * s.net.size() as u64).sum()
    }

    pub fn depth(&self) -> usize {
        self.stages.iter().map(|s| s.repeat * s.net.depth()).sum()
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim() {
            return Err(NetError::DimensionMismatch { expected: self.in_dim(), got: x.len() });
        }
        let mut a = x.to_vec();
        let mut b = Vec::new();
        for s in &self.stages {
            for _ in 0..s.repeat {
                s.compiled.eval_into(&a, &mut b);
                std::mem::swap(&mut a, &mut b);
            }
        }
        Ok(a)
    }

    /// Reference evaluation through the uncompiled networks.
    pub fn eval_exact(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut a = x.to_vec();
        for s in &self.stages {
            for _ in 0..s.repeat {
                a = s.net.eval(&a)?;
            }
        }
        Ok(a)
    }

    /// Stacks every stage into one network.
    pub fn materialize(&self) -> Result<ReluNetwork> {
        let mut it = self.stages.iter().flat_map(|s| std::iter::repeat(&s.net).take(s.repeat));
        let first = it.next().ok_or(NetError::Empty)?;
        let mut net = (**first).clone();
        for n in it {
            net = stack(n, &net)?;
        }
        Ok(net)
    }
}
