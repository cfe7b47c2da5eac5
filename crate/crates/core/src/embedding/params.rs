use rand_distr::{Distribution, Normal};

use super::arch::{ModelArch, StreamArch};
use crate::error::{Error, Result};
use crate::util::rng_for;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Parameters of one stream, in [`StreamArch::tensor_layout`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamParams {
    pub arch: StreamArch,
    pub tensors: Vec<Tensor>,
}

impl StreamParams {
    pub fn zeros(arch: &StreamArch) -> Self {
        Self {
            arch: arch.clone(),
            tensors: arch
                .tensor_layout()
                .iter()
                .map(|(_, s)| Tensor::zeros(s))
                .collect(),
        }
    }

    /// He-style fan-in initialization (ReLU gain for convs, unit gain for the
    /// output layer); biases start at zero.
    pub fn init(arch: &StreamArch, rng_seed: u64, stream: u64) -> Self {
        let mut rng = rng_for(rng_seed, 0x1417_0000 | stream);
        let mut p = Self::zeros(arch);
        let layout = arch.tensor_layout();
        for ((name, shape), t) in layout.iter().zip(p.tensors.iter_mut()) {
            if !name.ends_with(".w") {
                continue;
            }
            let fan_in: usize = shape[1..].iter().product();
            let gain = if name.starts_with("fc") { 1.0 } else { 2.0 };
            let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive std");
            for v in t.data.iter_mut() {
                *v = normal.sample(&mut rng);
            }
        }
        p
    }

    pub(crate) fn check(&self) -> Result<()> {
        let layout = self.arch.tensor_layout();
        if layout.len() != self.tensors.len() {
            return Err(Error::Shape(format!(
                "stream has {} tensors, architecture declares {}",
                self.tensors.len(),
                layout.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&self.tensors) {
            if &t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Shape(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape
                )));
            }
        }
        Ok(())
    }
}

/// All model parameters: one [`StreamParams`] per role plus the fusion layer.
/// Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct PmsmParams {
    pub arch: ModelArch,
    pub streams: Vec<StreamParams>,
    /// `embed_dim × (streams · stream out_dim)`.
    pub fusion_w: Tensor,
    pub fusion_b: Tensor,
}

impl PmsmParams {
    pub fn zeros(arch: &ModelArch) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch: arch.clone(),
            streams: arch.roles.iter().map(|_| StreamParams::zeros(&arch.stream)).collect(),
            fusion_w: Tensor::zeros(&[arch.embed_dim, arch.fusion_in()]),
            fusion_b: Tensor::zeros(&[arch.embed_dim]),
        })
    }

    /// Independently seeded streams; parameters are stored at `f32` precision.
    pub fn init(arch: &ModelArch, rng_seed: u64) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        for (i, s) in p.streams.iter_mut().enumerate() {
            *s = StreamParams::init(&arch.stream, rng_seed, i as u64);
        }
        let mut rng = rng_for(rng_seed, 0xf5_0000);
        let normal = Normal::new(0.0, (1.0 / arch.fusion_in() as f64).sqrt()).expect("positive std");
        for v in p.fusion_w.data.iter_mut() {
            *v = normal.sample(&mut rng);
        }
        p.round_to_f32();
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.arch).expect("arch already validated")
    }

    pub fn check(&self) -> Result<()> {
        self.arch.validate()?;
        if self.streams.len() != self.arch.roles.len() {
            return Err(Error::Shape("stream count differs from role count".into()));
        }
        for s in &self.streams {
            if s.arch != self.arch.stream {
                return Err(Error::Shape("streams must share one architecture".into()));
            }
            s.check()?;
        }
        if self.fusion_w.shape != [self.arch.embed_dim, self.arch.fusion_in()]
            || self.fusion_b.shape != [self.arch.embed_dim]
        {
            return Err(Error::Shape("fusion layer shape mismatch".into()));
        }
        Ok(())
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.streams
            .iter()
            .flat_map(|s| s.tensors.iter())
            .chain([&self.fusion_w, &self.fusion_b])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.streams
            .iter_mut()
            .flat_map(|s| s.tensors.iter_mut())
            .chain([&mut self.fusion_w, &mut self.fusion_b])
    }

    /// Names aligned with [`PmsmParams::tensors`], e.g. `part_i.conv1.w`, `fusion.b`.
    pub fn tensor_names(&self) -> Vec<String> {
        let layout = self.arch.stream.tensor_layout();
        let mut names = Vec::new();
        for role in &self.arch.roles {
            names.extend(layout.iter().map(|(n, _)| format!("{}.{n}", role.name())));
        }
        names.push("fusion.w".into());
        names.push("fusion.b".into());
        names
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    /// Flattened copy in declaration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn round_to_f32(&mut self) {
        for t in self.tensors_mut() {
            for v in t.data.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    /// `self += scale · other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &PmsmParams, scale: f64) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * y;
            }
        }
    }
}
