//! Acceptance gate: one line per criterion, non-zero exit if any fails.
//!
//! Expected values come from oracles written here against the geometry and
//! formulas directly, not from the library's own helpers.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::f64::consts::{FRAC_PI_2, PI};
use std::time::Instant;

use glam::{DVec2, DVec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sve_core::avatar::{zone_of, AgentConfig, UserRig, Zone};
use sve_core::geom::Pose;
use sve_core::harness::scenarios::{generate_figure_eight, generate_straight_joystick};
use sve_core::harness::{canonical_snapshots, replay_trace, run_scenario, scenario_trace, MetricsReport, TechniqueBundle, Trace, TraceRecorder};
use sve_core::locomotion::{map_input, snap_turn, velocity_multiplier, InputSample, LocomotionConfig, LocomotionMode, MapperState, MotionCommand};
use sve_core::navmesh::NavMesh;
use sve_core::session::*;
use sve_core::transitions::{start_transition, tick_transition, TransitionConfig, TransitionKind};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("distance equivalence", distance_equivalence),
        ("optical-flow proxy separation", optical_flow_separation),
        ("study parameter fidelity", parameter_fidelity),
        ("zone thresholds", zone_thresholds),
        ("transition timing", transition_timing),
        ("pathfinding oracle", pathfinding_oracle),
        ("pushpull anchor invariance", anchor_invariance),
        ("determinism and protocol", determinism_and_protocol),
        ("figure-eight reproduction", figure_eight),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} acceptance criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

const DT: f64 = 1.0 / 60.0;

fn joystick_pair() -> (MetricsReport, MetricsReport, f64) {
    let started = Instant::now();
    let scenario = generate_straight_joystick(10.0, 60.0);
    let run = |locomotion| {
        let bundle = TechniqueBundle::new(Technique {
            locomotion,
            ..Technique::default()
        });
        run_scenario(&scenario, &bundle, 0).expect("scenario runs")
    };
    let smooth = run(LocomotionMode::SmoothJoystick);
    let stuttered = run(LocomotionMode::StutteredJoystick);
    (smooth, stuttered, started.elapsed().as_secs_f64())
}

fn distance_equivalence() -> Outcome {
    let (smooth, stuttered, seconds) = joystick_pair();
    // 2.5 m/s for 600 ticks; steps fire at t = 0, 0.2, ..., 9.8 s.
    let expected_smooth = 2.5 * 10.0;
    let expected_steps = (0..600).filter(|tick| tick % 12 == 0).count() as u64;
    check(
        (smooth.net_displacement - expected_smooth).abs() <= 2.5 * DT
            && (stuttered.net_displacement - smooth.net_displacement).abs() <= 0.5
            && stuttered.teleport_count == expected_steps
            && expected_steps == 50
            && seconds < 1.0,
        format!(
            "smooth {:.4} m, stuttered {:.4} m, {} teleports (oracle {expected_steps}), {seconds:.3} s",
            smooth.net_displacement, stuttered.net_displacement, stuttered.teleport_count
        ),
    )
}

fn optical_flow_separation() -> Outcome {
    let (smooth, stuttered, _) = joystick_pair();
    check(
        (smooth.optical_flow_translation - 25.0).abs() <= 2.5 * DT && stuttered.optical_flow_translation == 0.0,
        format!(
            "smooth {:.6} m vs stuttered {:.6} m",
            smooth.optical_flow_translation, stuttered.optical_flow_translation
        ),
    )
}

fn parameter_fidelity() -> Outcome {
    let cfg = LocomotionConfig::default();
    let mut problems = Vec::new();
    if cfg.max_joystick_speed != 2.5 {
        problems.push(format!("joystick speed {}", cfg.max_joystick_speed));
    }
    if cfg.step_length != 0.5 {
        problems.push(format!("step {}", cfg.step_length));
    }
    if (cfg.turn_step - 30f64.to_radians()).abs() > 1e-12 {
        problems.push(format!("turn step {}", cfg.turn_step.to_degrees()));
    }
    // Six flicks of the right stick.
    let mut state = MapperState::default();
    let mut total = 0.0;
    for _ in 0..6 {
        for x in [1.0, 0.0] {
            let (cmds, next) = snap_turn(x, &state, &cfg);
            state = next;
            for cmd in cmds {
                if let MotionCommand::SnapTurn { delta_yaw } = cmd {
                    total += delta_yaw;
                }
            }
        }
    }
    if (total - PI).abs() > 1e-9 {
        problems.push(format!("six snaps turn {} deg", total.to_degrees()));
    }
    // Closed form: 1 at chest height rising linearly to 4 at hip height.
    let (chest, hip) = (1.35, 0.95);
    let mut worst: f64 = 0.0;
    for i in 0..=10 {
        let h = hip + (chest - hip) * i as f64 / 10.0;
        let expected = 4.0 - 3.0 * (h - hip) / (chest - hip);
        worst = worst.max((velocity_multiplier(h, &cfg) - expected).abs());
    }
    let range_ok = velocity_multiplier(2.0, &cfg) == 1.0 && velocity_multiplier(0.0, &cfg) == 4.0;
    if worst > 1e-9 || !range_ok {
        problems.push(format!("multiplier error {worst:e}, range ok {range_ok}"));
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!("2.5 m/s, 0.5 m, 30 deg, 6 snaps = {:.1} deg, multiplier max error {worst:.1e}", total.to_degrees())
        } else {
            problems.join("; ")
        },
    )
}

fn zone_thresholds() -> Outcome {
    let cfg = AgentConfig::default();
    let up = |x: f64| x + x * f64::EPSILON * 2.0;
    let cases = [
        (0.0, Zone::Imitate),
        (0.5, Zone::Imitate),
        (up(0.5), Zone::Strafe),
        (1.5, Zone::Strafe),
        (2.0, Zone::Strafe),
        (up(2.0), Zone::Follow),
        (6.0, Zone::Follow),
        (up(6.0), Zone::LongDistance),
    ];
    let wrong: Vec<String> = cases
        .iter()
        .filter(|(d, z)| zone_of(*d, &cfg) != *z)
        .map(|(d, z)| format!("{d} -> {:?}, expected {z:?}", zone_of(*d, &cfg)))
        .collect();
    check(
        wrong.is_empty(),
        if wrong.is_empty() {
            format!("{} boundary cases", cases.len())
        } else {
            wrong.join("; ")
        },
    )
}

fn transition_timing() -> Outcome {
    let mesh = NavMesh::rectangle(DVec2::new(-1.0, -1.0), DVec2::new(1.0, 21.0), 1, 11).expect("mesh");
    let agent = AgentConfig::default();
    let rig = UserRig::standing(Pose::at(DVec3::new(0.0, 0.0, 20.0)), 1.75);
    let walk_time = 20.0 / agent.base_max_speed;
    let dash_time = walk_time / 10.0;
    let mut lines = Vec::new();
    let mut ok = true;

    for kind in TransitionKind::ALL {
        let cfg = TransitionConfig::with_kind(kind);
        let mut state = start_transition(Pose::default(), &rig, &mesh, &agent, &cfg).map_err(|e| e.to_string())?;
        let mut ticks = 0u32;
        let mut conservation: f64 = 0.0;
        while !state.complete && ticks < 10_000 {
            state = tick_transition(&state, &rig, &mesh, &agent, &cfg, DT).map_err(|e| e.to_string())?;
            ticks += 1;
            if kind == TransitionKind::Dissolve {
                conservation = conservation.max((state.dissolve_in_alpha + state.dissolve_out_alpha - 1.0).abs());
                let copy = state.ghosts.first().map_or(f64::NAN, |g| g.alpha);
                conservation = conservation.max((copy - state.dissolve_out_alpha).abs());
            }
        }
        let took = ticks as f64 * DT;
        let (expected, tolerance) = match kind {
            TransitionKind::Walking | TransitionKind::Foresight => (walk_time, 2.0 * DT),
            TransitionKind::Afterimage => (dash_time, 2.0 * DT),
            TransitionKind::Dissolve => (cfg.dissolve_duration, DT),
        };
        let mut good = (took - expected).abs() <= tolerance + 1e-12;
        let mut line = format!("{kind:?} {took:.4} s (expected {expected:.4})");
        if kind == TransitionKind::Foresight {
            let trail = state.trail.as_ref().and_then(|t| t.arrived_at).unwrap_or(f64::NAN);
            good &= (trail - dash_time).abs() <= 2.0 * DT + 1e-12;
            line += &format!(", trail {trail:.4} s");
        }
        if kind == TransitionKind::Dissolve {
            good &= conservation < 1e-9;
            line += &format!(", alpha error {conservation:.1e}");
        }
        ok &= good;
        lines.push(line);
    }
    check(ok, lines.join("; "))
}

// Pathfinding oracle: Dijkstra over a 0.1 m lattice of the free cells.

struct Raster {
    cells: HashSet<(i32, i32)>,
    size: f64,
    step: f64,
    nx: usize,
    nz: usize,
}

#[derive(PartialEq)]
struct Open(f64, usize);

impl Eq for Open {}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl Raster {
    fn new(cells: &[(i32, i32)], size: f64) -> Self {
        let max_i = cells.iter().map(|c| c.0).max().unwrap() + 1;
        let max_j = cells.iter().map(|c| c.1).max().unwrap() + 1;
        assert!(cells.iter().all(|c| c.0 >= 0 && c.1 >= 0));
        let step = 0.1;
        Self {
            cells: cells.iter().copied().collect(),
            size,
            step,
            nx: (max_i as f64 * size / step).round() as usize + 1,
            nz: (max_j as f64 * size / step).round() as usize + 1,
        }
    }

    fn point(&self, node: usize) -> DVec2 {
        DVec2::new((node % self.nx) as f64 * self.step, (node / self.nx) as f64 * self.step)
    }

    fn node(&self, p: DVec2) -> usize {
        let i = (p.x / self.step).round() as usize;
        let j = (p.y / self.step).round() as usize;
        j * self.nx + i
    }

    /// Closed free region: points on cell borders count as free.
    fn free(&self, p: DVec2) -> bool {
        let e = 1e-9;
        [(-e, -e), (-e, e), (e, -e), (e, e)].iter().any(|(dx, dz)| {
            let i = ((p.x + dx) / self.size).floor() as i32;
            let j = ((p.y + dz) / self.size).floor() as i32;
            self.cells.contains(&(i, j))
        })
    }

    /// True unless the segment passes through the interior of a blocked cell.
    fn clear(&self, a: DVec2, b: DVec2) -> bool {
        let lo = a.min(b);
        let hi = a.max(b);
        for i in (lo.x / self.size).floor() as i32 - 1..=(hi.x / self.size).floor() as i32 {
            for j in (lo.y / self.size).floor() as i32 - 1..=(hi.y / self.size).floor() as i32 {
                if self.cells.contains(&(i, j)) {
                    continue;
                }
                let min = DVec2::new(i as f64, j as f64) * self.size;
                let max = min + DVec2::splat(self.size);
                if crosses_interior(a, b, min, max) {
                    return false;
                }
            }
        }
        true
    }

    fn dijkstra(&self, source: DVec2, reach: i64) -> Vec<f64> {
        let mut offsets = Vec::new();
        for dx in -reach..=reach {
            for dz in -reach..=reach {
                if (dx, dz) != (0, 0) && gcd(dx.abs(), dz.abs()) == 1 {
                    offsets.push((dx, dz));
                }
            }
        }
        let mut dist = vec![f64::INFINITY; self.nx * self.nz];
        let start = self.node(source);
        dist[start] = 0.0;
        let mut heap = BinaryHeap::from([Open(0.0, start)]);
        while let Some(Open(d, node)) = heap.pop() {
            if d > dist[node] {
                continue;
            }
            let (i, j) = ((node % self.nx) as i64, (node / self.nx) as i64);
            let p = self.point(node);
            for &(dx, dz) in &offsets {
                let (ni, nj) = (i + dx, j + dz);
                if ni < 0 || nj < 0 || ni >= self.nx as i64 || nj >= self.nz as i64 {
                    continue;
                }
                let next = nj as usize * self.nx + ni as usize;
                let q = self.point(next);
                let nd = d + (q - p).length();
                if nd < dist[next] && self.free(q) && self.clear(p, q) {
                    dist[next] = nd;
                    heap.push(Open(nd, next));
                }
            }
        }
        dist
    }
}

/// Liang-Barsky clip; the clipped chord's midpoint tells interior from edge contact.
fn crosses_interior(a: DVec2, b: DVec2, min: DVec2, max: DVec2) -> bool {
    let d = b - a;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [(-d.x, a.x - min.x), (d.x, max.x - a.x), (-d.y, a.y - min.y), (d.y, max.y - a.y)] {
        if p == 0.0 {
            if q < 0.0 {
                return false;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    if t1 - t0 <= 1e-12 {
        return false;
    }
    let m = a + d * ((t0 + t1) / 2.0);
    let e = 1e-9;
    m.x > min.x + e && m.x < max.x - e && m.y > min.y + e && m.y < max.y - e
}

fn test_meshes() -> Vec<(&'static str, Vec<(i32, i32)>)> {
    let square = |n: i32| -> Vec<(i32, i32)> { (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect() };
    let convex = square(5);
    let l: Vec<_> = (0..5).map(|i| (i, 0)).chain((1..5).map(|j| (4, j))).collect();
    let u: Vec<_> = (0..5).map(|i| (i, 0)).chain((1..5).flat_map(|j| [(0, j), (4, j)])).collect();
    let h: Vec<_> = (0..5).flat_map(|j| [(0, j), (4, j)]).chain((1..4).map(|i| (i, 2))).collect();
    let ring: Vec<_> = square(5).into_iter().filter(|&(i, j)| i == 0 || j == 0 || i == 4 || j == 4).collect();
    vec![("convex", convex), ("L", l), ("U", u), ("H", h), ("ring", ring)]
}

fn pathfinding_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_fine: f64 = 0.0;
    let mut worst_coarse: f64 = 0.0;
    let mut failures = Vec::new();
    let mut pairs = 0;
    for (name, cells) in test_meshes() {
        let mesh = NavMesh::from_cells(&cells, 2.0).map_err(|e| e.to_string())?;
        let raster = Raster::new(&cells, 2.0);
        let random_node = |rng: &mut ChaCha8Rng| loop {
            let node = rng.gen_range(0..raster.nx * raster.nz);
            let p = raster.point(node);
            if raster.free(p) {
                return p;
            }
        };
        for _ in 0..3 {
            let source = random_node(&mut rng);
            let fine = raster.dijkstra(source, 4);
            let coarse = raster.dijkstra(source, 1);
            for _ in 0..8 {
                let goal = random_node(&mut rng);
                let node = raster.node(goal);
                let path = mesh
                    .find_path(DVec3::new(source.x, 0.0, source.y), DVec3::new(goal.x, 0.0, goal.y))
                    .map_err(|e| format!("{name}: {e}"))?;
                let straight = source.distance(goal);
                let (f, c, len) = (fine[node], coarse[node], path.total_length);
                pairs += 1;
                if straight < 1e-9 {
                    continue;
                }
                let rel_fine = (len - f).abs() / f;
                worst_fine = worst_fine.max(rel_fine);
                worst_coarse = worst_coarse.max(len / c - 1.0);
                if rel_fine > 0.02 || len > 1.02 * c || len < straight - 1e-9 {
                    failures.push(format!("{name} {source} -> {goal}: funnel {len:.3}, fine {f:.3}, 8-conn {c:.3}"));
                }
            }
        }
    }
    let seconds = started.elapsed().as_secs_f64();
    if seconds >= 10.0 {
        failures.push(format!("took {seconds:.1} s"));
    }
    check(
        failures.is_empty(),
        if failures.is_empty() {
            format!(
                "{pairs} pairs on 5 meshes, max deviation {:.2}% from 16-direction grid, funnel/8-connected grid max {:+.2}%, {seconds:.2} s",
                worst_fine * 100.0,
                worst_coarse * 100.0
            )
        } else {
            failures.join("; ")
        },
    )
}

/// World position of a rig-local point, written out for the left-handed yaw convention.
fn to_world(origin: &Pose, local: DVec3) -> DVec2 {
    let (s, c) = origin.yaw.sin_cos();
    DVec2::new(
        origin.position.x + local.x * c + local.z * s,
        origin.position.z - local.x * s + local.z * c,
    )
}

fn anchor_invariance() -> Outcome {
    let cfg = LocomotionConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let traces = 20;
    for _ in 0..traces {
        let mut origin = Pose::new(
            DVec3::new(rng.gen_range(-10.0..10.0), 0.0, rng.gen_range(-10.0..10.0)),
            rng.gen_range(-PI..PI),
        );
        let mut hand = DVec3::new(rng.gen_range(-0.4..0.4), 1.4, rng.gen_range(0.1..0.6));
        let mut state = MapperState::default();
        let mut reference: Option<DVec2> = None;
        for tick in 0..1000 {
            hand += DVec3::new(rng.gen_range(-0.03..0.03), 0.0, rng.gen_range(-0.03..0.03));
            hand.y = rng.gen_range(1.35..1.8);
            let held = rng.gen::<f64>() > 0.01;
            let mut sample = InputSample::idle(tick as f64 * DT);
            sample.left_hand = Pose::at(hand);
            sample.left_grab = held;
            let rig = UserRig::from_local(origin, &UserRig::default_head(1.75), &sample.left_hand, &sample.right_hand, 1.75);
            let (commands, next) = map_input(LocomotionMode::SmoothPushPull, &sample, &state, &cfg, DT, &rig);
            state = next;
            for command in commands {
                match command {
                    MotionCommand::Continuous { delta_position, delta_yaw } => {
                        origin.position += delta_position;
                        origin.yaw += delta_yaw;
                    }
                    other => return Err(format!("unexpected {other:?}")),
                }
            }
            if !held {
                reference = None;
                continue;
            }
            let world = to_world(&origin, hand);
            let anchor = *reference.get_or_insert(world);
            worst = worst.max(world.distance(anchor));
        }
    }
    check(worst < 1e-6, format!("{traces} traces x 1000 ticks, max drift {worst:.2e} m"))
}

// Random message corpus.

fn rf(rng: &mut ChaCha8Rng) -> f64 {
    match rng.gen_range(0..6) {
        0 => 0.0,
        1 => rng.gen_range(-1e-6..1e-6),
        2 => rng.gen_range(-1e9..1e9),
        _ => rng.gen_range(-100.0..100.0),
    }
}

fn rv3(rng: &mut ChaCha8Rng) -> DVec3 {
    DVec3::new(rf(rng), rf(rng), rf(rng))
}

fn rpose(rng: &mut ChaCha8Rng) -> Pose {
    Pose {
        position: rv3(rng),
        yaw: rng.gen_range(-PI..PI),
        pitch: rng.gen_range(-FRAC_PI_2..FRAC_PI_2),
        roll: rf(rng),
    }
}

fn rtechnique(rng: &mut ChaCha8Rng) -> Technique {
    Technique {
        locomotion: [
            LocomotionMode::SmoothJoystick,
            LocomotionMode::StutteredJoystick,
            LocomotionMode::SmoothPushPull,
            LocomotionMode::StutteredPushPull,
        ][rng.gen_range(0..4)],
        avatar: if rng.gen() { AvatarStyle::Smart } else { AvatarStyle::Primitive },
        transition: TransitionKind::ALL[rng.gen_range(0..4)],
    }
}

fn rsample(rng: &mut ChaCha8Rng) -> InputSample {
    InputSample {
        t: rng.gen_range(0.0..1e4),
        left_stick: DVec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
        right_stick: DVec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
        head: if rng.gen() { Some(rpose(rng)) } else { None },
        left_hand: rpose(rng),
        right_hand: rpose(rng),
        left_grab: rng.gen(),
        right_grab: rng.gen(),
    }
}

fn rname(rng: &mut ChaCha8Rng) -> String {
    let alphabet: Vec<char> = "abcXYZ 019_-\"\\/é漢\u{1F600}\n\t".chars().collect();
    (0..rng.gen_range(0..12)).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect()
}

fn rghost(rng: &mut ChaCha8Rng) -> GhostView {
    GhostView {
        pose: rpose(rng),
        alpha: rng.gen_range(0.0..=1.0),
    }
}

fn rsnapshot(rng: &mut ChaCha8Rng) -> SessionSnapshot {
    let users = (0..rng.gen_range(0..5))
        .map(|i| {
            let transition = rng.gen_bool(0.6).then(|| {
                let kind = TransitionKind::ALL[rng.gen_range(0..4)];
                let a = rng.gen_range(0.0..=1.0);
                TransitionSnapshot {
                    kind,
                    elapsed: rng.gen_range(0.0..10.0),
                    ghosts: (0..rng.gen_range(0..6)).map(|_| rghost(rng)).collect(),
                    dissolve_in_alpha: a,
                    dissolve_out_alpha: 1.0 - a,
                    stream: rng.gen::<bool>().then(|| [rv3(rng), rv3(rng)]),
                    user_ghost: (kind == TransitionKind::Foresight).then(|| rpose(rng)),
                    trail_pose: (kind == TransitionKind::Foresight).then(|| rpose(rng)),
                    visible_to_self: rng.gen(),
                }
            });
            UserSnapshot {
                user_id: i + rng.gen_range(1..1000),
                name: rname(rng),
                technique: rtechnique(rng),
                rig_origin: rpose(rng),
                head: rpose(rng),
                left_hand: rpose(rng),
                right_hand: rpose(rng),
                avatar: AvatarSnapshot {
                    pose: rpose(rng),
                    zone: [Zone::Follow, Zone::Strafe, Zone::Imitate, Zone::LongDistance][rng.gen_range(0..4)],
                    strafe_weight: rng.gen_range(0.0..=1.0),
                    imitation_weight: rng.gen_range(0.0..=1.0),
                    fading_ghosts: (0..rng.gen_range(0..3)).map(|_| rghost(rng)).collect(),
                },
                transition,
                last_teleport_seq: rng.gen(),
            }
        })
        .collect();
    SessionSnapshot {
        session_tick: rng.gen(),
        users,
    }
}

fn revent(rng: &mut ChaCha8Rng) -> SessionEvent {
    let user_id = rng.gen();
    match rng.gen_range(0..7) {
        0 => SessionEvent::Joined { user_id, name: rname(rng) },
        1 => SessionEvent::Left { user_id },
        2 => SessionEvent::Teleport {
            user_id,
            teleport_seq: rng.gen(),
            from: rv3(rng),
            to: rv3(rng),
        },
        3 => SessionEvent::TransitionStarted {
            user_id,
            kind: TransitionKind::ALL[rng.gen_range(0..4)],
            gap: rf(rng).abs(),
        },
        4 => SessionEvent::TransitionCompleted {
            user_id,
            kind: TransitionKind::ALL[rng.gen_range(0..4)],
            duration: rf(rng).abs(),
        },
        5 => SessionEvent::AvatarSnapped { user_id, reason: rname(rng) },
        _ => SessionEvent::Dropped {
            user_id,
            seq: rng.gen(),
            reason: [DropReason::UnknownUser, DropReason::SeqRegression, DropReason::SessionFull, DropReason::VersionMismatch]
                [rng.gen_range(0..4)],
        },
    }
}

fn rmessage(rng: &mut ChaCha8Rng, kind: usize) -> WireMessage {
    let payload = match kind {
        0 => Payload::Hello(Hello {
            user_id: rng.gen::<bool>().then(|| rng.gen()),
            name: rname(rng),
            protocol_version: rng.gen(),
            technique: rng.gen::<bool>().then(|| rtechnique(rng)),
        }),
        1 => Payload::Welcome(Welcome {
            user_id: rng.gen(),
            protocol_version: PROTOCOL_VERSION,
            tick_rate: rng.gen_range(1.0..240.0),
            snapshot: rsnapshot(rng),
        }),
        2 => Payload::InputFrame(InputFrame {
            user_id: rng.gen(),
            sample: rsample(rng),
            teleport_to: rng.gen::<bool>().then(|| rv3(rng)),
            technique: rng.gen::<bool>().then(|| rtechnique(rng)),
        }),
        3 => Payload::Snapshot(rsnapshot(rng)),
        4 => Payload::Event(revent(rng)),
        _ => Payload::Goodbye(Goodbye {
            user_id: rng.gen::<bool>().then(|| rng.gen()),
            reason: rname(rng),
        }),
    };
    WireMessage::new(rng.gen(), rng.gen(), payload)
}

fn live_trace(seed: u64) -> Result<(Trace, Vec<TickOutput>), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mesh = NavMesh::from_cells(&test_meshes()[4].1, 4.0).map_err(|e| e.to_string())?;
    let mut recorder = TraceRecorder::new(SessionConfig::default(), mesh).map_err(|e| e.to_string())?;
    let mut ids = Vec::new();
    for i in 0..3 {
        let hello = Hello {
            user_id: None,
            name: format!("user{i}"),
            protocol_version: PROTOCOL_VERSION,
            technique: Some(rtechnique(&mut rng)),
        };
        let origin = Pose::new(DVec3::new(2.0 + 4.0 * i as f64, 0.0, 2.0), rng.gen_range(-PI..PI));
        ids.push(recorder.join(&hello, origin).map_err(|e| e.to_string())?);
    }
    let mut outputs = Vec::new();
    for seq in 1..=900u64 {
        let mut frames = Vec::new();
        for &id in &ids {
            if rng.gen_bool(0.2) {
                continue;
            }
            let mut sample = InputSample::idle(seq as f64 * DT);
            sample.left_stick = DVec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-0.2..1.0));
            sample.right_stick.x = if rng.gen_bool(0.02) { 1.0 } else { 0.0 };
            sample.left_grab = rng.gen_bool(0.5);
            sample.left_hand.position.z += rng.gen_range(-0.1..0.1);
            frames.push(ClientFrame {
                seq,
                frame: InputFrame {
                    user_id: id,
                    sample,
                    teleport_to: rng.gen_bool(0.01).then(|| DVec3::new(rng.gen_range(0.0..20.0), 0.0, rng.gen_range(0.0..20.0))),
                    technique: rng.gen_bool(0.005).then(|| rtechnique(&mut rng)),
                },
            });
        }
        outputs.push(recorder.tick(frames));
    }
    Ok((recorder.finish(), outputs))
}

fn determinism_and_protocol() -> Outcome {
    let (trace, live) = live_trace(3)?;
    let mut text = Vec::new();
    trace.write(&mut text).map_err(|e| e.to_string())?;
    let reread = Trace::read(std::io::Cursor::new(text)).map_err(|e| e.to_string())?;
    let first = canonical_snapshots(&replay_trace(&reread).map_err(|e| e.to_string())?);
    let second = canonical_snapshots(&replay_trace(&reread).map_err(|e| e.to_string())?);
    let scripted = scenario_trace(&generate_figure_eight(), &TechniqueBundle::default(), 1).map_err(|e| e.to_string())?;
    let scripted_equal = canonical_snapshots(&replay_trace(&scripted).map_err(|e| e.to_string())?)
        == canonical_snapshots(&replay_trace(&scripted).map_err(|e| e.to_string())?);
    let replay_ok = first == second && first == canonical_snapshots(&live) && scripted_equal;

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let per_type = 200;
    let mut mismatches = 0;
    for kind in 0..Payload::TYPES.len() {
        for _ in 0..per_type {
            let msg = rmessage(&mut rng, kind);
            if decode_message(&encode_message(&msg)).as_ref() != Ok(&msg) {
                mismatches += 1;
            }
        }
    }
    let total = per_type * Payload::TYPES.len();
    check(
        replay_ok && mismatches == 0,
        format!(
            "replays byte-identical: {replay_ok} ({} ticks, {} bytes); {total} random messages, {mismatches} roundtrip mismatches",
            live.len(),
            first.len()
        ),
    )
}

fn figure_eight() -> Outcome {
    let scenario = generate_figure_eight();
    let targets = scenario.teleport_targets();
    let (lo, hi) = targets
        .iter()
        .fold((DVec3::INFINITY, DVec3::NEG_INFINITY), |(lo, hi), t| (lo.min(*t), hi.max(*t)));
    let size = hi - lo;
    let geometry_ok = targets.len() == 11 && (size.x - 50.0).abs() <= 0.1 && (size.z - 10.0).abs() <= 0.1;

    let report = run_scenario(&scenario, &TechniqueBundle::default(), 0).map_err(|e| e.to_string())?;

    // Straight-line oracle: the avatar walks at base speed toward the latest
    // target and is wherever that leaves it when the next teleport comes.
    let speed = AgentConfig::default().base_max_speed;
    let window = 4.0;
    let tolerance = 2.0 * DT;
    let mut avatar = DVec2::ZERO;
    let mut max_gap: f64 = 0.0;
    let mut problems = Vec::new();
    if report.realignments.len() != targets.len() {
        problems.push(format!("{} realignments for {} teleports", report.realignments.len(), targets.len()));
    }
    for (k, (target, measured)) in targets.iter().zip(&report.realignments).enumerate() {
        let target = DVec2::new(target.x, target.z);
        let gap = avatar.distance(target);
        max_gap = max_gap.max(gap);
        let needed = gap / speed;
        let completes = needed <= window;
        if (measured.gap - gap).abs() > speed * tolerance {
            problems.push(format!("teleport {k}: gap {:.3} vs oracle {gap:.3}", measured.gap));
        }
        if measured.incomplete == completes {
            problems.push(format!("teleport {k}: incomplete flag {} vs oracle {}", measured.incomplete, !completes));
        }
        if completes {
            match measured.duration {
                Some(d) if (d - needed).abs() <= tolerance + 1e-9 => {}
                other => problems.push(format!("teleport {k}: realignment {other:?} vs oracle {needed:.4}")),
            }
            avatar = target;
        } else {
            avatar += (target - avatar).normalize() * speed * window;
        }
    }
    if (report.discrepancy_max - max_gap).abs() > speed * tolerance {
        problems.push(format!("discrepancy_max {:.3} vs oracle {max_gap:.3}", report.discrepancy_max));
    }
    if !geometry_ok {
        problems.push(format!("{} targets spanning {:.3} x {:.3} m", targets.len(), size.x, size.z));
    }
    let times: Vec<String> = report
        .realignments
        .iter()
        .map(|r| r.duration.map_or("incomplete".to_string(), |d| format!("{d:.3}")))
        .collect();
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "11 targets in {:.2} x {:.2} m; realignment s [{}]; discrepancy_max {:.3} m (oracle {max_gap:.3}); {} continuity violations",
                size.x,
                size.z,
                times.join(", "),
                report.discrepancy_max,
                report.continuity_violations
            )
        } else {
            problems.join("; ")
        },
    )
}
