//! Closed-loop simulation of the quantized observer-based controllers.
//!
//! Plant side and controller side run as separate state machines that
//! exchange only box indices. The plant advances by its exact
//! zero-order-hold map; intersample values are filled in afterwards.

use std::fmt::Write as _;

use serde::Serialize;

use crate::design::GainPair;
use crate::error::{Error, OverflowSource, Result};
use crate::numerics::{vec_max_norm, Vector};
use crate::plant::{discretize, ContinuousPlant, DiscretePlant};
use crate::quantizer::HypercubeQuantizer;
use crate::schedule::{BoundRecursion, BoundSchedule, Bounds, Variant};

/// The output quantizer never zooms finer than this many ulps of its
/// center. Below that, `y_k` and `yhat_k` carry too few significant bits
/// for the boxes to mean anything.
pub const RESOLUTION_ULPS: f64 = 1024.0;

/// Smallest half-width of the output quantizer centered at `center`.
pub fn output_resolution(center: &Vector) -> f64 {
    RESOLUTION_ULPS * f64::EPSILON * vec_max_norm(center)
}

fn output_quantizer(center: Vector, e: f64, levels: u64) -> Result<HypercubeQuantizer> {
    let half_width = e.max(output_resolution(&center));
    HypercubeQuantizer::new(center, half_width, levels)
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub dp: DiscretePlant,
    pub gains: GainPair,
    pub schedule: BoundSchedule,
    pub x0: Vector,
    pub k_max: usize,
    /// When false the channel is ideal: every quantizer returns its input.
    pub quantize: bool,
}

impl SimConfig {
    pub fn new(dp: DiscretePlant, gains: GainPair, schedule: BoundSchedule, x0: Vector, k_max: usize) -> Result<Self> {
        let cfg = Self::new_unchecked_bound(dp, gains, schedule, x0, k_max)?;
        if !cfg.initial_bound_holds() {
            return Err(Error::Precondition(format!(
                "|x0| = {} exceeds E_st = {}",
                vec_max_norm(&cfg.x0),
                cfg.e_st()
            )));
        }
        Ok(cfg)
    }

    /// Like [`SimConfig::new`] but accepts `|x0| > E_st`, so that a violated
    /// initial bound shows up as a quantizer overflow during the run.
    pub fn new_unchecked_bound(
        dp: DiscretePlant,
        gains: GainPair,
        schedule: BoundSchedule,
        x0: Vector,
        k_max: usize,
    ) -> Result<Self> {
        if x0.len() != dp.n() {
            return Err(Error::Dimension(format!(
                "x0 has {} entries, plant has {} states",
                x0.len(),
                dp.n()
            )));
        }
        if !gains.is_consistent_with(&dp) {
            return Err(Error::Argument("gains were designed for a different plant".into()));
        }
        Ok(Self {
            dp,
            gains,
            schedule,
            x0,
            k_max,
            quantize: true,
        })
    }

    pub fn without_quantization(mut self) -> Self {
        self.quantize = false;
        self
    }

    pub fn e_st(&self) -> f64 {
        self.schedule.e_st
    }

    pub fn initial_bound_holds(&self) -> bool {
        vec_max_norm(&self.x0) <= self.e_st()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub k: usize,
    pub t: f64,
    pub x: Vector,
    pub xhat: Vector,
    pub y: Vector,
    pub yhat: Vector,
    /// Transmitted output index; `None` on an overflow step or with an
    /// ideal channel.
    pub q_index: Option<u64>,
    /// Decoded output.
    pub q: Vector,
    /// Center of the output quantizer: `Q1(yhat)`, or `yhat` itself when
    /// only the output is quantized.
    pub q1_yhat: Vector,
    /// Input computed by the controller.
    pub u: Vector,
    /// Input held by the plant over `[kh, (k+1)h)`.
    pub u_applied: Vector,
    pub bounds: Bounds,
    /// Resolution floor of the output quantizer at this step; its
    /// half-width is `max(E, resolution)`.
    pub resolution: f64,
    pub overflow: bool,
}

impl TraceRecord {
    /// Whether the output quantizer ran at its resolution floor.
    pub fn resolution_limited(&self) -> bool {
        self.resolution > self.bounds.e
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverflowEvent {
    pub source: OverflowSource,
    pub step: usize,
    pub axis: usize,
    pub excess: f64,
}

impl From<OverflowEvent> for Error {
    fn from(e: OverflowEvent) -> Self {
        Error::Overflow {
            quantizer: e.source,
            step: e.step,
            axis: e.axis,
            excess: e.excess,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimOutcome {
    pub variant: Variant,
    pub h: f64,
    pub trace: Vec<TraceRecord>,
    pub overflow: Option<OverflowEvent>,
    /// Whether every bound and estimate computed on the two sides agreed
    /// bit for bit.
    pub synchronized: bool,
}

impl SimOutcome {
    /// `Err` with the overflow diagnostic if the run halted.
    pub fn check(&self) -> Result<()> {
        match self.overflow {
            Some(e) => Err(e.into()),
            None => Ok(()),
        }
    }

    pub fn final_record(&self) -> &TraceRecord {
        self.trace.last().expect("a simulation records at least one step")
    }

    pub fn to_csv(&self) -> String {
        let Some(first) = self.trace.first() else {
            return String::new();
        };
        let (n, p, m) = (first.x.len(), first.y.len(), first.u.len());
        let mut cols = vec!["k".to_string(), "t".to_string()];
        let mut push = |name: &str, len: usize| cols.extend((0..len).map(|i| format!("{name}{i}")));
        push("x", n);
        push("xhat", n);
        push("y", p);
        cols.push("q_index".into());
        let mut push = |name: &str, len: usize| cols.extend((0..len).map(|i| format!("{name}{i}")));
        push("q", p);
        push("Q1_yhat", p);
        push("Q2_u", m);
        push("u", m);
        cols.extend(["E", "E1", "E2", "overflow"].map(String::from));

        let mut out = cols.join(",");
        out.push('\n');
        for r in &self.trace {
            let mut row = vec![r.k.to_string(), r.t.to_string()];
            let mut vals = |v: &Vector| row.extend(v.iter().map(|x| x.to_string()));
            vals(&r.x);
            vals(&r.xhat);
            vals(&r.y);
            row.push(r.q_index.map(|i| i.to_string()).unwrap_or_default());
            let mut vals = |v: &Vector| row.extend(v.iter().map(|x| x.to_string()));
            vals(&r.q);
            vals(&r.q1_yhat);
            vals(&r.u_applied);
            vals(&r.u);
            row.push(r.bounds.e.to_string());
            row.push(r.bounds.e1.to_string());
            row.push(r.bounds.e2.to_string());
            row.push(u8::from(r.overflow).to_string());
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

fn nan(len: usize) -> Vector {
    Vector::from_element(len, f64::NAN)
}

fn overflow_of(err: Error, source: OverflowSource, step: usize) -> Result<OverflowEvent> {
    match err {
        Error::Saturation { axis, excess } => Ok(OverflowEvent {
            source,
            step,
            axis,
            excess,
        }),
        other => Err(other),
    }
}

/// Observer copy held by one side of the channel in the output-only
/// protocol.
#[derive(Debug, Clone)]
struct ObserverReplica {
    xhat: Vector,
    bounds: BoundRecursion,
}

impl ObserverReplica {
    fn new(cfg: &SimConfig) -> Self {
        Self {
            xhat: Vector::zeros(cfg.dp.n()),
            bounds: cfg.schedule.recursion(),
        }
    }

    fn output_quantizer(&self, cfg: &SimConfig) -> Result<HypercubeQuantizer> {
        output_quantizer(&cfg.dp.c * &self.xhat, self.bounds.current().e, cfg.schedule.levels.n)
    }

    fn input(&self, cfg: &SimConfig) -> Vector {
        -(&cfg.gains.k * &self.xhat)
    }

    fn update(&mut self, cfg: &SimConfig, q: &Vector) {
        let dp = &cfg.dp;
        let u = self.input(cfg);
        let innovation = q - &dp.c * &self.xhat;
        self.xhat = &dp.ad * &self.xhat + &dp.bd * u + &cfg.gains.l * innovation;
        self.bounds.advance();
    }
}

/// Output-only quantization: the encoder sends the box of `y_k` inside the
/// hypercube centered at `yhat_k = C xhat_k` with half-width `E_k`.
pub fn simulate_output_quantized(cfg: &SimConfig) -> Result<SimOutcome> {
    let variant = cfg.schedule.variant();
    if variant == Variant::Full {
        return Err(Error::Argument(
            "output-only simulation needs a general or deadbeat schedule".into(),
        ));
    }
    cfg.gains.require_stable(false)?;
    let dp = &cfg.dp;
    let (p, h) = (dp.p(), dp.h);

    let mut encoder = ObserverReplica::new(cfg);
    let mut controller = ObserverReplica::new(cfg);
    let mut x = cfg.x0.clone();
    let mut trace = Vec::with_capacity(cfg.k_max + 1);
    let mut synchronized = true;

    for k in 0..=cfg.k_max {
        let y = &dp.c * &x;
        let yhat = &dp.c * &controller.xhat;
        let bounds = controller.bounds.current();
        let u = controller.input(cfg);
        let mut record = TraceRecord {
            k,
            t: k as f64 * h,
            x: x.clone(),
            xhat: controller.xhat.clone(),
            y: y.clone(),
            yhat: yhat.clone(),
            q_index: None,
            q: nan(p),
            q1_yhat: yhat.clone(),
            u: u.clone(),
            u_applied: u.clone(),
            bounds,
            resolution: output_resolution(&yhat),
            overflow: false,
        };

        // plant side
        let q = if cfg.quantize {
            let index = match encoder.output_quantizer(cfg)?.encode(&y) {
                Ok(i) => i,
                Err(e) => {
                    let event = overflow_of(e, OverflowSource::Output, k)?;
                    record.overflow = true;
                    trace.push(record);
                    return Ok(SimOutcome {
                        variant,
                        h,
                        trace,
                        overflow: Some(event),
                        synchronized,
                    });
                }
            };
            record.q_index = Some(index);
            let q_enc = encoder.output_quantizer(cfg)?.decode(index)?;
            encoder.update(cfg, &q_enc);
            // controller side
            let q = controller.output_quantizer(cfg)?.decode(index)?;
            controller.update(cfg, &q);
            q
        } else {
            encoder.update(cfg, &y);
            controller.update(cfg, &y);
            y
        };
        synchronized &= encoder.xhat == controller.xhat
            && encoder.bounds.current() == controller.bounds.current();
        record.q = q;
        trace.push(record);

        x = &dp.ad * &x + &dp.bd * &u;
    }
    Ok(SimOutcome {
        variant,
        h,
        trace,
        overflow: None,
        synchronized,
    })
}

/// Output, estimate and input quantization. The controller owns the
/// observer and sends `Q1(yhat_k)` and `Q2(u_k)`; the plant side encodes
/// `y_k` around `Q1(yhat_k)` and applies `Q2(u_k)`. The observer update
/// uses the unquantized `u_k`.
pub fn simulate_full_quantized(cfg: &SimConfig) -> Result<SimOutcome> {
    let variant = cfg.schedule.variant();
    if variant != Variant::Full {
        return Err(Error::Argument("full simulation needs a full schedule".into()));
    }
    cfg.gains.require_stable(false)?;
    let dp = &cfg.dp;
    let (n, p, h) = (dp.n(), dp.p(), dp.h);
    let levels = cfg.schedule.levels;

    let mut plant_bounds = cfg.schedule.recursion();
    let mut ctrl_bounds = cfg.schedule.recursion();
    let mut xhat = Vector::zeros(n);
    let mut x = cfg.x0.clone();
    let mut trace = Vec::with_capacity(cfg.k_max + 1);
    let mut synchronized = true;

    for k in 0..=cfg.k_max {
        let y = &dp.c * &x;
        let yhat = &dp.c * &xhat;
        let u = -(&cfg.gains.k * &xhat);
        let bounds = ctrl_bounds.current();
        let mut record = TraceRecord {
            k,
            t: k as f64 * h,
            x: x.clone(),
            xhat: xhat.clone(),
            y: y.clone(),
            yhat: yhat.clone(),
            q_index: None,
            q: nan(p),
            q1_yhat: nan(p),
            u: u.clone(),
            u_applied: nan(u.len()),
            bounds,
            resolution: 0.0,
            overflow: false,
        };
        macro_rules! halt {
            ($err:expr, $source:expr) => {{
                let event = overflow_of($err, $source, k)?;
                record.overflow = true;
                trace.push(record);
                return Ok(SimOutcome {
                    variant,
                    h,
                    trace,
                    overflow: Some(event),
                    synchronized,
                });
            }};
        }

        let (center, u_applied, q) = if cfg.quantize {
            // controller side
            let q1 = HypercubeQuantizer::origin(p, bounds.e1, levels.n1)?;
            let q2 = HypercubeQuantizer::origin(u.len(), bounds.e2, levels.n2)?;
            let i1 = match q1.encode(&yhat) {
                Ok(i) => i,
                Err(e) => halt!(e, OverflowSource::Estimate),
            };
            let i2 = match q2.encode(&u) {
                Ok(i) => i,
                Err(e) => halt!(e, OverflowSource::Input),
            };

            // plant side
            let pb = plant_bounds.current();
            let center = HypercubeQuantizer::origin(p, pb.e1, levels.n1)?.decode(i1)?;
            let u_applied = HypercubeQuantizer::origin(u.len(), pb.e2, levels.n2)?.decode(i2)?;
            let qy = output_quantizer(center.clone(), pb.e, levels.n)?;
            let index = match qy.encode(&y) {
                Ok(i) => i,
                Err(e) => {
                    record.resolution = output_resolution(&center);
                    record.q1_yhat = center;
                    record.u_applied = u_applied;
                    halt!(e, OverflowSource::Output)
                }
            };
            record.q_index = Some(index);
            record.resolution = output_resolution(&center);

            // controller side
            let ctrl_center = q1.decode(i1)?;
            let q = output_quantizer(ctrl_center.clone(), bounds.e, levels.n)?.decode(index)?;
            synchronized &= ctrl_center == center && pb == bounds;
            (ctrl_center, u_applied, q)
        } else {
            (yhat.clone(), u.clone(), y.clone())
        };

        xhat = &dp.ad * &xhat + &dp.bd * &u + &cfg.gains.l * (&q - &center);
        plant_bounds.advance();
        ctrl_bounds.advance();
        x = &dp.ad * &x + &dp.bd * &u_applied;

        record.q = q;
        record.q1_yhat = center;
        record.u_applied = u_applied;
        trace.push(record);
    }
    Ok(SimOutcome {
        variant,
        h,
        trace,
        overflow: None,
        synchronized,
    })
}

/// Runs whichever protocol matches the schedule.
pub fn simulate(cfg: &SimConfig) -> Result<SimOutcome> {
    match cfg.schedule.variant() {
        Variant::Full => simulate_full_quantized(cfg),
        _ => simulate_output_quantized(cfg),
    }
}

/// Continuous-time state between samples: `substeps` evenly spaced points
/// in each period, followed by the last sampled state.
pub fn intersample_trajectory(cp: &ContinuousPlant, outcome: &SimOutcome, substeps: usize) -> Result<Vec<(f64, Vector)>> {
    if substeps == 0 {
        return Err(Error::Argument("substeps must be at least 1".into()));
    }
    let h = outcome.h;
    let maps = (1..substeps)
        .map(|j| discretize(cp, h * j as f64 / substeps as f64))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(outcome.trace.len() * substeps);
    let Some((last, periods)) = outcome.trace.split_last() else {
        return Ok(out);
    };
    for r in periods {
        out.push((r.t, r.x.clone()));
        for (j, map) in maps.iter().enumerate() {
            let tau = h * (j + 1) as f64 / substeps as f64;
            out.push((r.t + tau, &map.ad * &r.x + &map.bd * &r.u_applied));
        }
    }
    out.push((last.t, last.x.clone()));
    Ok(out)
}
