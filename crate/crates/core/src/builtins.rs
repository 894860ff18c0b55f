//! Named functionals, flow coefficients and quadratic-variation functionals that configs
//! can refer to, held in trait-object registries.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ldp::{Coefficients, FlowSpec, LinearFlow, QvPath, SineFlow};
use crate::model::{CylinderFunctional, UncertaintySet};

/// Inputs shared by functional builders.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FunctionalParams {
    pub horizon: f64,
    pub dim: usize,
    /// Level `c` of capped functionals.
    pub cap: f64,
}

pub trait FunctionalBuilder: Send + Sync {
    fn name(&self) -> &'static str;
    fn formula(&self) -> &'static str;
    fn build(&self, p: &FunctionalParams) -> Result<CylinderFunctional>;
    /// Exact sublinear expectation when available in closed form.
    fn reference(&self, _set: &UncertaintySet, _p: &FunctionalParams) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    pub dim: usize,
    pub rate: f64,
    pub vol: f64,
    pub eps: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            dim: 1,
            rate: 1.0,
            vol: 1.0,
            eps: 0.0,
        }
    }
}

pub trait FlowBuilder: Send + Sync {
    fn name(&self) -> &'static str;
    fn formula(&self) -> &'static str;
    fn build(&self, p: &FlowParams) -> Result<FlowSpec>;
}

pub type QvFn = Arc<dyn Fn(&QvPath<'_>) -> f64 + Send + Sync>;

pub trait QvBuilder: Send + Sync {
    fn name(&self) -> &'static str;
    fn formula(&self) -> &'static str;
    fn build(&self, cap: f64) -> QvFn;
    /// `sup_g U(g)` over the admissible quadratic variations when known.
    fn reference(&self, set: &UncertaintySet, horizon: f64, cap: f64) -> Option<f64>;
}

/// Name-keyed collection of builders.
pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<&'static str, Box<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &'static str, entry: Box<T>) {
        self.entries.insert(name, entry);
    }

    pub fn get(&self, name: &str) -> Result<&T> {
        self.entries.get(name).map(|b| b.as_ref()).ok_or_else(|| {
            Error::Config(format!(
                "unknown {} '{name}' (known: {})",
                self.kind,
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &T)> {
        self.entries.iter().map(|(k, v)| (*k, v.as_ref()))
    }
}

type BuildFn = fn(&FunctionalParams) -> Result<CylinderFunctional>;
type RefFn = fn(&UncertaintySet, &FunctionalParams) -> Option<f64>;

struct Functional {
    name: &'static str,
    formula: &'static str,
    build: BuildFn,
    reference: RefFn,
}

impl FunctionalBuilder for Functional {
    fn name(&self) -> &'static str {
        self.name
    }
    fn formula(&self) -> &'static str {
        self.formula
    }
    fn build(&self, p: &FunctionalParams) -> Result<CylinderFunctional> {
        (self.build)(p)
    }
    fn reference(&self, set: &UncertaintySet, p: &FunctionalParams) -> Option<f64> {
        (self.reference)(set, p)
    }
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn terminal(
    label: &str,
    p: &FunctionalParams,
    phi: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    bound: f64,
    lipschitz: f64,
) -> Result<CylinderFunctional> {
    CylinderFunctional::new(
        label,
        vec![p.horizon],
        p.dim,
        Arc::new(phi),
        bound,
        lipschitz,
    )
}

fn increments(
    label: &str,
    p: &FunctionalParams,
    phi: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    bound: f64,
    lipschitz: f64,
) -> Result<CylinderFunctional> {
    let d = p.dim;
    CylinderFunctional::new(
        label,
        vec![0.5 * p.horizon, p.horizon],
        d,
        Arc::new(move |x: &[f64]| phi(&x[..d], &x[d..])),
        bound,
        lipschitz,
    )
}

fn check_cap(p: &FunctionalParams) -> Result<()> {
    if p.cap > 0.0 && p.cap.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "cap must be positive and finite, got {}",
            p.cap
        )))
    }
}

fn no_reference(_: &UncertaintySet, _: &FunctionalParams) -> Option<f64> {
    None
}

fn functionals() -> Vec<Functional> {
    vec![
        Functional {
            name: "x",
            formula: "phi(B_T) = B_T^1",
            build: |p| terminal("x", p, |x| x[0], f64::INFINITY, 1.0),
            reference: |_, _| Some(0.0),
        },
        Functional {
            name: "x2",
            formula: "phi(B_T) = |B_T|^2",
            build: |p| terminal("x2", p, norm2, f64::INFINITY, f64::INFINITY),
            reference: |s, p| Some(s.sigma_hi2() * p.horizon * p.dim as f64),
        },
        Functional {
            name: "neg_x2",
            formula: "phi(B_T) = -|B_T|^2",
            build: |p| terminal("neg_x2", p, |x| -norm2(x), f64::INFINITY, f64::INFINITY),
            reference: |s, p| Some(-s.sigma_lo2() * p.horizon * p.dim as f64),
        },
        Functional {
            name: "abs",
            formula: "phi(B_T) = |B_T|",
            build: |p| terminal("abs", p, |x| norm2(x).sqrt(), f64::INFINITY, 1.0),
            reference: |s, p| (p.dim == 1).then(|| (2.0 * s.sigma_hi2() * p.horizon / PI).sqrt()),
        },
        Functional {
            name: "min_x2",
            formula: "phi(B_T) = min(|B_T|^2, c)",
            build: |p| {
                check_cap(p)?;
                let c = p.cap;
                terminal("min_x2", p, move |x| norm2(x).min(c), c, 2.0 * c.sqrt())
            },
            reference: no_reference,
        },
        Functional {
            name: "sin",
            formula: "phi(B_T) = sin(B_T^1)",
            build: |p| terminal("sin", p, |x| x[0].sin(), 1.0, 1.0),
            reference: no_reference,
        },
        Functional {
            name: "increment_min_sq",
            formula: "phi(B_{T/2}, B_T) = sum_i min(B_T^i - B_{T/2}^i, 1)^2",
            build: |p| {
                increments(
                    "increment_min_sq",
                    p,
                    |a, b| a.iter().zip(b).map(|(u, v)| (v - u).min(1.0).powi(2)).sum(),
                    f64::INFINITY,
                    f64::INFINITY,
                )
            },
            reference: no_reference,
        },
        Functional {
            name: "increment_capped",
            formula: "phi(B_{T/2}, B_T) = min(|B_T - B_{T/2}|^2, c)",
            build: |p| {
                check_cap(p)?;
                let c = p.cap;
                let d = p.dim as f64;
                increments(
                    "increment_capped",
                    p,
                    move |a, b| {
                        a.iter()
                            .zip(b)
                            .map(|(u, v)| (v - u).powi(2))
                            .sum::<f64>()
                            .min(c)
                    },
                    c,
                    2.0 * (2.0 * c * d).sqrt(),
                )
            },
            reference: no_reference,
        },
    ]
}

struct Flow {
    name: &'static str,
    formula: &'static str,
    build: fn(&FlowParams) -> Result<FlowSpec>,
}

impl FlowBuilder for Flow {
    fn name(&self) -> &'static str {
        self.name
    }
    fn formula(&self) -> &'static str {
        self.formula
    }
    fn build(&self, p: &FlowParams) -> Result<FlowSpec> {
        (self.build)(p)
    }
}

fn linear(name: &str, p: &FlowParams, rate: f64, vol: f64) -> Result<FlowSpec> {
    if p.dim == 0 {
        return Err(Error::Config("flow dimension must be positive".into()));
    }
    let c: Arc<dyn Coefficients> = Arc::new(LinearFlow {
        dim: p.dim,
        rate,
        vol,
        qv: 0.0,
    });
    FlowSpec::new(name, c, rate.abs(), p.eps)
}

fn flows() -> Vec<Flow> {
    vec![
        Flow {
            name: "linear",
            formula: "b(x) = -r x, sigma = v I, h = 0",
            build: |p| linear("linear", p, p.rate, p.vol),
        },
        Flow {
            name: "identity",
            formula: "b = 0, sigma = I, h = 0",
            build: |p| linear("identity", p, 0.0, 1.0),
        },
        Flow {
            name: "sine",
            formula: "b(x) = -sin x, sigma(x) = 1 + cos(x)/2, h(x) = sin(x)/4 (scalar)",
            build: |p| {
                if p.dim != 1 {
                    return Err(Error::Config("the sine flow is scalar".into()));
                }
                FlowSpec::new("sine", Arc::new(SineFlow), 1.2, p.eps)
            },
        },
    ]
}

struct Qv {
    name: &'static str,
    formula: &'static str,
    build: fn(f64) -> QvFn,
    reference: fn(&UncertaintySet, f64, f64) -> Option<f64>,
}

impl QvBuilder for Qv {
    fn name(&self) -> &'static str {
        self.name
    }
    fn formula(&self) -> &'static str {
        self.formula
    }
    fn build(&self, cap: f64) -> QvFn {
        (self.build)(cap)
    }
    fn reference(&self, set: &UncertaintySet, horizon: f64, cap: f64) -> Option<f64> {
        (self.reference)(set, horizon, cap)
    }
}

fn trace_terminal(q: &QvPath<'_>) -> f64 {
    q.terminal().diag().iter().sum()
}

fn qv_functionals() -> Vec<Qv> {
    vec![
        Qv {
            name: "arctan_terminal",
            formula: "U(g) = arctan(tr g(T))",
            build: |_| Arc::new(|q| trace_terminal(q).atan()),
            reference: |s, t, _| Some((s.dim() as f64 * s.sigma_hi2() * t).atan()),
        },
        Qv {
            name: "neg_terminal",
            formula: "U(g) = -tr g(T)",
            build: |_| Arc::new(|q| -trace_terminal(q)),
            reference: |s, t, _| Some(-(s.dim() as f64) * s.sigma_lo2() * t),
        },
        Qv {
            name: "constant",
            formula: "U(g) = c",
            build: |c| Arc::new(move |_| c),
            reference: |_, _, c| Some(c),
        },
    ]
}

/// All shipped builders.
pub struct Builtins {
    pub functionals: Registry<dyn FunctionalBuilder>,
    pub flows: Registry<dyn FlowBuilder>,
    pub qv: Registry<dyn QvBuilder>,
}

impl Default for Builtins {
    fn default() -> Self {
        let mut functionals: Registry<dyn FunctionalBuilder> = Registry::new("functional");
        for f in functionals_list() {
            functionals.insert(f.name(), f);
        }
        let mut flow_reg: Registry<dyn FlowBuilder> = Registry::new("flow");
        for f in flows() {
            flow_reg.insert(f.name, Box::new(f));
        }
        let mut qv: Registry<dyn QvBuilder> = Registry::new("qv functional");
        for f in qv_functionals() {
            qv.insert(f.name, Box::new(f));
        }
        Self {
            functionals,
            flows: flow_reg,
            qv,
        }
    }
}

fn functionals_list() -> Vec<Box<dyn FunctionalBuilder>> {
    functionals()
        .into_iter()
        .map(|f| Box::new(f) as Box<dyn FunctionalBuilder>)
        .collect()
}

impl Builtins {
    pub fn listing(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "functionals:");
        for (name, f) in self.functionals.iter() {
            let _ = writeln!(out, "  {name:<18} {}", f.formula());
        }
        let _ = writeln!(out, "flows:");
        for (name, f) in self.flows.iter() {
            let _ = writeln!(out, "  {name:<18} {}", f.formula());
        }
        let _ = writeln!(out, "qv functionals:");
        for (name, f) in self.qv.iter() {
            let _ = writeln!(out, "  {name:<18} {}", f.formula());
        }
        out
    }
}

/// Scalar `phi(B_T)` interpolating `(xs, ys)` linearly, constant beyond the end points.
pub fn tabulated(xs: &[f64], ys: &[f64], horizon: f64) -> Result<CylinderFunctional> {
    if xs.len() < 2 || xs.len() != ys.len() {
        return Err(Error::Config(format!(
            "table needs at least two points and equal lengths, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.windows(2).any(|w| !(w[1] > w[0])) || xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Config(
            "table abscissae must be finite and strictly increasing".into(),
        ));
    }
    let bound = ys.iter().fold(0.0_f64, |m, y| m.max(y.abs()));
    let lipschitz = xs
        .windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| ((y[1] - y[0]) / (x[1] - x[0])).abs())
        .fold(0.0, f64::max);
    let (xs, ys) = (xs.to_vec(), ys.to_vec());
    let phi = move |x: &[f64]| {
        let v = x[0];
        let n = xs.len();
        if v <= xs[0] {
            return ys[0];
        }
        if v >= xs[n - 1] {
            return ys[n - 1];
        }
        let i = xs.partition_point(|a| *a <= v) - 1;
        let w = (v - xs[i]) / (xs[i + 1] - xs[i]);
        ys[i] + w * (ys[i + 1] - ys[i])
    };
    CylinderFunctional::new("table", vec![horizon], 1, Arc::new(phi), bound, lipschitz)
}
