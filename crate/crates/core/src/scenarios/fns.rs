//! Coefficient sets built from closures.

use std::sync::Arc;

use crate::backward::{BackwardCoefficients, DriverArgs, DriverWrt};
use crate::forward::{ForwardCoefficients, KernelArgs, Wrt};
use crate::hamiltonian::{Objective, ProfitArgs, ProfitWrt};

type Scalar = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct ForwardFns {
    pub drift: Arc<dyn Fn(&KernelArgs) -> f64 + Send + Sync>,
    pub diffusion: Arc<dyn Fn(&KernelArgs, usize, f64) -> f64 + Send + Sync>,
    pub drift_partial: Option<Arc<dyn Fn(&KernelArgs, Wrt) -> Option<f64> + Send + Sync>>,
    pub time_dependent: bool,
}

impl ForwardFns {
    pub fn new(
        drift: impl Fn(&KernelArgs) -> f64 + Send + Sync + 'static,
        diffusion: impl Fn(&KernelArgs, usize, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            drift_partial: None,
            time_dependent: false,
        }
    }
}

impl ForwardCoefficients for ForwardFns {
    fn drift(&self, a: &KernelArgs) -> f64 {
        (self.drift)(a)
    }

    fn diffusion(&self, a: &KernelArgs, k: usize, z: f64) -> f64 {
        (self.diffusion)(a, k, z)
    }

    fn drift_partial(&self, a: &KernelArgs, wrt: Wrt) -> Option<f64> {
        self.drift_partial.as_ref().and_then(|f| f(a, wrt))
    }

    fn time_dependent(&self) -> bool {
        self.time_dependent
    }
}

#[derive(Clone)]
pub struct BackwardFns {
    pub driver: Arc<dyn Fn(&DriverArgs) -> f64 + Send + Sync>,
    pub terminal: Scalar,
    pub driver_partial: Option<Arc<dyn Fn(&DriverArgs, DriverWrt) -> Option<f64> + Send + Sync>>,
    pub uses_theta: bool,
    pub time_dependent: bool,
}

impl BackwardFns {
    pub fn new(
        driver: impl Fn(&DriverArgs) -> f64 + Send + Sync + 'static,
        terminal: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            driver: Arc::new(driver),
            terminal: Arc::new(terminal),
            driver_partial: None,
            uses_theta: false,
            time_dependent: false,
        }
    }

    /// `g = 0`, `h = 0`.
    pub fn zero() -> Self {
        Self::new(|_| 0.0, |_| 0.0)
    }
}

impl BackwardCoefficients for BackwardFns {
    fn driver(&self, a: &DriverArgs) -> f64 {
        (self.driver)(a)
    }

    fn terminal(&self, x: f64) -> f64 {
        (self.terminal)(x)
    }

    fn driver_partial(&self, a: &DriverArgs, wrt: DriverWrt) -> Option<f64> {
        self.driver_partial.as_ref().and_then(|f| f(a, wrt))
    }

    fn uses_theta(&self) -> bool {
        self.uses_theta
    }

    fn time_dependent(&self) -> bool {
        self.time_dependent
    }
}

#[derive(Clone)]
pub struct ObjectiveFns {
    pub profit: Arc<dyn Fn(&ProfitArgs) -> f64 + Send + Sync>,
    pub terminal_reward: Scalar,
    pub initial_risk: Scalar,
    pub profit_partial: Option<Arc<dyn Fn(&ProfitArgs, ProfitWrt) -> Option<f64> + Send + Sync>>,
    pub terminal_reward_prime: Option<Scalar>,
    pub initial_risk_prime: Option<Scalar>,
}

impl ObjectiveFns {
    pub fn new(
        profit: impl Fn(&ProfitArgs) -> f64 + Send + Sync + 'static,
        terminal_reward: impl Fn(f64) -> f64 + Send + Sync + 'static,
        initial_risk: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            profit: Arc::new(profit),
            terminal_reward: Arc::new(terminal_reward),
            initial_risk: Arc::new(initial_risk),
            profit_partial: None,
            terminal_reward_prime: None,
            initial_risk_prime: None,
        }
    }

    pub fn zero() -> Self {
        Self::new(|_| 0.0, |_| 0.0, |_| 0.0)
    }
}

impl Objective for ObjectiveFns {
    fn profit(&self, a: &ProfitArgs) -> f64 {
        (self.profit)(a)
    }

    fn terminal_reward(&self, x: f64) -> f64 {
        (self.terminal_reward)(x)
    }

    fn initial_risk(&self, y: f64) -> f64 {
        (self.initial_risk)(y)
    }

    fn profit_partial(&self, a: &ProfitArgs, wrt: ProfitWrt) -> Option<f64> {
        self.profit_partial.as_ref().and_then(|f| f(a, wrt))
    }

    fn terminal_reward_derivative(&self, x: f64) -> Option<f64> {
        self.terminal_reward_prime.as_ref().map(|f| f(x))
    }

    fn initial_risk_derivative(&self, y: f64) -> Option<f64> {
        self.initial_risk_prime.as_ref().map(|f| f(y))
    }
}
