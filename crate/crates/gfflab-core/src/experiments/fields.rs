use crate::error::Result;
use crate::gaussian::{CovarianceModel, ExactSampler, TorusSampler};
use crate::lattice::{Domain, LatticeBox};
use crate::rng::Rng;

use super::config::SamplerKind;

enum Backend {
    Torus(TorusSampler),
    Exact(ExactSampler),
}

/// Free-field samples on the window `Λ_R`, with the labelled window domain.
pub struct WindowSource {
    backend: Backend,
    window: LatticeBox,
    domain: Domain,
    description: String,
}

impl WindowSource {
    pub fn new(dim: usize, radius: usize, kind: SamplerKind, margin: f64, compensate: bool) -> Result<Self> {
        let window = LatticeBox::new(dim, radius as i64)?;
        let (backend, description) = match kind {
            SamplerKind::Torus => {
                let mut t = TorusSampler::for_window(dim, radius, margin)?;
                if compensate {
                    t = t.compensated()?;
                }
                let d = format!("torus L={}{}", t.side(), if compensate { " +zero-mode" } else { "" });
                (Backend::Torus(t), d)
            }
            SamplerKind::Exact => {
                let sites: Vec<_> = window.sites().collect();
                let s = ExactSampler::new(&CovarianceModel::gff(dim)?, &sites)?;
                (Backend::Exact(s), "exact".to_string())
            }
        };
        let domain = window.domain();
        Ok(Self { backend, window, domain, description })
    }

    pub fn window(&self) -> &LatticeBox {
        &self.window
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn torus(&self) -> Option<&TorusSampler> {
        match &self.backend {
            Backend::Torus(t) => Some(t),
            Backend::Exact(_) => None,
        }
    }

    /// Sampler provenance string, e.g. `torus L=80 +zero-mode`.
    pub fn describe(&self) -> &str {
        &self.description
    }

    /// Window label `Λ_R` for provenance columns.
    pub fn window_label(&self) -> String {
        format!("box R={}", self.window.side(0) / 2)
    }

    pub fn sample(&self, rng: &mut Rng) -> Result<Vec<f64>> {
        match &self.backend {
            Backend::Torus(t) => t.sample_window(&self.window, rng),
            Backend::Exact(s) => Ok(s.sample(rng)),
        }
    }
}
