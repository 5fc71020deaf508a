//! Family-tagged problem instances and their JSON files.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::np::{NpInstance, NpPayload};
use crate::problem::{BoundsBundle, BoxSet, FirstOrder, Moduli, Problem, Vector};
use crate::qcqp::{QcqpInstance, QcqpPayload};

#[derive(Debug, Clone)]
pub enum Instance {
    Qcqp(QcqpInstance),
    Np(NpInstance),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", content = "payload", rename_all = "snake_case")]
pub enum Payload {
    Qcqp(QcqpPayload),
    Np(NpPayload),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceFile {
    pub n: usize,
    pub p: usize,
    #[serde(flatten)]
    pub payload: Payload,
    pub bounds: BoundsBundle,
    pub xhat: Vec<f64>,
    pub moduli: Moduli,
}

impl Instance {
    pub fn family(&self) -> &'static str {
        match self {
            Instance::Qcqp(_) => "qcqp",
            Instance::Np(_) => "np",
        }
    }

    pub fn bounds(&self) -> Result<BoundsBundle> {
        match self {
            Instance::Qcqp(q) => Ok(q.analytic_bounds()),
            Instance::Np(np) => np.analytic_bounds(),
        }
    }

    /// A certified lower bound on `min_X f`.
    pub fn objective_lower_bound(&self) -> f64 {
        match self {
            Instance::Qcqp(q) => q.objective_lower_bound(),
            // Mean of sigmoids.
            Instance::Np(_) => 0.0,
        }
    }

    pub fn to_file(&self) -> Result<InstanceFile> {
        let bounds = self.bounds()?;
        let payload = match self {
            Instance::Qcqp(q) => Payload::Qcqp(q.to_payload()),
            Instance::Np(np) => Payload::Np(np.to_payload()),
        };
        Ok(InstanceFile {
            n: self.dim(),
            p: self.num_constraints(),
            payload,
            xhat: bounds.xhat.clone(),
            bounds,
            moduli: self.moduli(),
        })
    }

    pub fn from_file(file: &InstanceFile) -> Result<Self> {
        let inst = match &file.payload {
            Payload::Qcqp(p) => Instance::Qcqp(QcqpInstance::from_payload(p)?),
            Payload::Np(p) => Instance::Np(NpInstance::from_payload(p)?),
        };
        if inst.dim() != file.n || inst.num_constraints() != file.p {
            return Err(Error::Input(format!(
                "instance header says n = {}, p = {} but payload has n = {}, p = {}",
                file.n,
                file.p,
                inst.dim(),
                inst.num_constraints()
            )));
        }
        Ok(inst)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_file()?)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(&serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the canonical JSON, git-blob style (`instance <len>\0` prefix).
    pub fn digest(&self) -> Result<String> {
        let body = self.to_json()?;
        let mut h = Sha256::new();
        h.update(format!("instance {}\0", body.len()).as_bytes());
        h.update(body.as_bytes());
        Ok(hex::encode(h.finalize()))
    }
}

macro_rules! delegate {
    ($self:ident, $inner:ident => $e:expr) => {
        match $self {
            Instance::Qcqp($inner) => $e,
            Instance::Np($inner) => $e,
        }
    };
}

impl Problem for Instance {
    fn dim(&self) -> usize {
        delegate!(self, p => p.dim())
    }
    fn num_constraints(&self) -> usize {
        delegate!(self, p => p.num_constraints())
    }
    fn feasible_set(&self) -> &BoxSet {
        delegate!(self, p => p.feasible_set())
    }
    fn moduli(&self) -> Moduli {
        delegate!(self, p => p.moduli())
    }
    fn objective(&self, x: &Vector) -> f64 {
        delegate!(self, p => p.objective(x))
    }
    fn objective_grad(&self, x: &Vector) -> Vector {
        delegate!(self, p => p.objective_grad(x))
    }
    fn constraint(&self, i: usize, x: &Vector) -> f64 {
        delegate!(self, p => p.constraint(i, x))
    }
    fn constraint_grad(&self, i: usize, x: &Vector) -> Vector {
        delegate!(self, p => p.constraint_grad(i, x))
    }
    fn constraints(&self, x: &Vector) -> Vector {
        delegate!(self, p => p.constraints(x))
    }
    fn constraint_jacobian(&self, x: &Vector) -> DMatrix<f64> {
        delegate!(self, p => p.constraint_jacobian(x))
    }
    fn first_order(&self, x: &Vector) -> FirstOrder {
        delegate!(self, p => p.first_order(x))
    }
}
