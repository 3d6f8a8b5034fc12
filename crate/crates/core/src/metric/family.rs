use std::sync::Arc;

use super::{ChartMetric, MetricError};

/// A smooth one-parameter family `t ↦ g_t` of chart metrics.
pub trait MetricFamily: Send + Sync {
    fn dim(&self) -> usize;
    fn t_domain(&self) -> (f64, f64);
    fn at(&self, t: f64) -> Result<Arc<dyn ChartMetric>, MetricError>;

    fn check_t(&self, t: f64) -> Result<(), MetricError> {
        let (a, b) = self.t_domain();
        if t.is_finite() && t >= a && t <= b {
            Ok(())
        } else {
            Err(MetricError::Invalid(format!("t = {t} outside [{a}, {b}]")))
        }
    }
}

type BuildFn = Arc<dyn Fn(f64) -> Result<Arc<dyn ChartMetric>, MetricError> + Send + Sync>;

/// A family built from a closure.
#[derive(Clone)]
pub struct FnFamily {
    dim: usize,
    t_domain: (f64, f64),
    build: BuildFn,
}

impl FnFamily {
    pub fn new(
        dim: usize,
        t_domain: (f64, f64),
        build: impl Fn(f64) -> Result<Arc<dyn ChartMetric>, MetricError> + Send + Sync + 'static,
    ) -> FnFamily {
        FnFamily {
            dim,
            t_domain,
            build: Arc::new(build),
        }
    }
}

impl MetricFamily for FnFamily {
    fn dim(&self) -> usize {
        self.dim
    }
    fn t_domain(&self) -> (f64, f64) {
        self.t_domain
    }
    fn at(&self, t: f64) -> Result<Arc<dyn ChartMetric>, MetricError> {
        self.check_t(t)?;
        (self.build)(t)
    }
}

/// The family that does not depend on `t`.
#[derive(Clone)]
pub struct ConstantFamily {
    metric: Arc<dyn ChartMetric>,
    t_domain: (f64, f64),
}

impl ConstantFamily {
    pub fn new(metric: Arc<dyn ChartMetric>, t_domain: (f64, f64)) -> ConstantFamily {
        ConstantFamily { metric, t_domain }
    }
}

impl MetricFamily for ConstantFamily {
    fn dim(&self) -> usize {
        self.metric.dim()
    }
    fn t_domain(&self) -> (f64, f64) {
        self.t_domain
    }
    fn at(&self, t: f64) -> Result<Arc<dyn ChartMetric>, MetricError> {
        self.check_t(t)?;
        Ok(self.metric.clone())
    }
}
