//! Two-room gridworld: a dividing wall with one locked door, a key in the
//! left room, optionally a ball parked in front of the door and a goal square
//! in the far corner of the right room.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::owpddl::{self, OwpddlError};
use crate::symbolic::{Fluent, FluentSet, FluentState, Literal, PartialFluentState, StripsTask};

pub const DOMAIN_TEXT: &str = include_str!("../assets/two-room.owpddl");

pub const DEFAULT_WIDTH: u8 = 11;
pub const DEFAULT_HEIGHT: u8 = 7;
const MAX_SIDE: u8 = 15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("layout error: {0}")]
    Layout(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dir {
    N,
    E,
    S,
    W,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::N, Dir::E, Dir::S, Dir::W];

    pub fn delta(self) -> (i8, i8) {
        match self {
            Dir::N => (0, -1),
            Dir::E => (1, 0),
            Dir::S => (0, 1),
            Dir::W => (-1, 0),
        }
    }

    pub fn left(self) -> Dir {
        Dir::ALL[(self as usize + 3) % 4]
    }

    pub fn right(self) -> Dir {
        Dir::ALL[(self as usize + 1) % 4]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PrimitiveAction {
    TurnLeft,
    TurnRight,
    Forward,
    Pickup,
    Drop,
    UseKey,
}

impl PrimitiveAction {
    pub const ALL: [PrimitiveAction; 6] = [
        PrimitiveAction::TurnLeft,
        PrimitiveAction::TurnRight,
        PrimitiveAction::Forward,
        PrimitiveAction::Pickup,
        PrimitiveAction::Drop,
        PrimitiveAction::UseKey,
    ];
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> PrimitiveAction {
        Self::ALL[i]
    }
}

impl fmt::Display for PrimitiveAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PrimitiveAction::TurnLeft => "turnLeft",
            PrimitiveAction::TurnRight => "turnRight",
            PrimitiveAction::Forward => "forward",
            PrimitiveAction::Pickup => "pickup",
            PrimitiveAction::Drop => "drop",
            PrimitiveAction::UseKey => "useKey",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Item {
    Key,
    Ball,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DoorStatus {
    Locked,
    Open,
}

pub type Pos = (u8, u8);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EnvConfig {
    pub puzzle: u8,
    pub width: u8,
    pub height: u8,
    pub max_steps: u32,
    /// Fixes the door row; episodes vary agent and key placement only.
    pub seed: u64,
}

impl EnvConfig {
    pub fn new(puzzle: u8, width: u8, height: u8, seed: u64) -> Self {
        EnvConfig {
            puzzle,
            width,
            height,
            max_steps: 4 * width as u32 * height as u32,
            seed,
        }
    }

    pub fn default_for(puzzle: u8, seed: u64) -> Self {
        Self::new(puzzle, DEFAULT_WIDTH, DEFAULT_HEIGHT, seed)
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if !(1..=3).contains(&self.puzzle) {
            return Err(EnvError::Layout(format!("unknown puzzle {}", self.puzzle)));
        }
        if self.width < 7 || self.height < 5 {
            return Err(EnvError::Layout(format!(
                "{}x{} grid is too small (minimum 7x5)",
                self.width, self.height
            )));
        }
        if self.width > MAX_SIDE || self.height > MAX_SIDE {
            return Err(EnvError::Layout(format!(
                "{}x{} grid is too large (maximum {MAX_SIDE}x{MAX_SIDE})",
                self.width, self.height
            )));
        }
        if self.max_steps == 0 {
            return Err(EnvError::Layout("max_steps must be positive".into()));
        }
        Ok(())
    }
}

/// Compact partial state over a layout's vocabulary: `known` marks assigned
/// fluents, `value` their truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Bits {
    pub known: u32,
    pub value: u32,
}

impl Bits {
    pub fn is_subset_of(self, other: Bits) -> bool {
        self.known & !other.known == 0 && (self.value ^ other.value) & self.known == 0
    }

    /// Literal-set intersection.
    pub fn intersect(self, other: Bits) -> Bits {
        let known = self.known & other.known & !(self.value ^ other.value);
        Bits {
            known,
            value: self.value & known,
        }
    }

    pub fn len(self) -> u32 {
        self.known.count_ones()
    }

    pub fn is_empty(self) -> bool {
        self.known == 0
    }
}

/// Fixed fluent vocabulary of a puzzle in canonical order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    fluents: Vec<Fluent>,
}

impl Vocabulary {
    pub fn new(fluents: &FluentSet) -> Self {
        assert!(fluents.len() <= 32, "vocabulary too large for bit encoding");
        Vocabulary {
            fluents: fluents.iter().cloned().collect(),
        }
    }

    pub fn fluents(&self) -> &[Fluent] {
        &self.fluents
    }

    pub fn fluent_set(&self) -> FluentSet {
        self.fluents.iter().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.fluents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fluents.is_empty()
    }

    pub fn index(&self, f: &Fluent) -> Option<usize> {
        self.fluents.binary_search(f).ok()
    }

    /// `None` if the state mentions a fluent outside the vocabulary.
    pub fn encode(&self, state: &PartialFluentState) -> Option<Bits> {
        let mut b = Bits::default();
        for l in state {
            let i = self.index(&l.fluent)?;
            b.known |= 1 << i;
            if l.positive {
                b.value |= 1 << i;
            }
        }
        Some(b)
    }

    pub fn decode(&self, bits: Bits) -> PartialFluentState {
        let lits = self
            .fluents
            .iter()
            .enumerate()
            .filter(|(i, _)| bits.known & (1 << i) != 0)
            .map(|(i, f)| Literal::new(f.clone(), bits.value & (1 << i) != 0))
            .collect();
        PartialFluentState::from_sorted_unchecked(lits)
    }
}

/// Everything about an episode that does not change after reset.
#[derive(Debug, PartialEq, Eq)]
pub struct Layout {
    pub config: EnvConfig,
    pub wall_x: u8,
    pub door: Pos,
    pub has_ball: bool,
    pub goal: Option<Pos>,
    pub vocabulary: Vocabulary,
    idx: FluentIndex,
}

#[derive(Debug, PartialEq, Eq, Default)]
struct FluentIndex {
    in_room: [Option<u8>; 4],
    facing: [Option<u8>; 4],
    holding: [Option<u8>; 2],
    hands_free: u8,
    blocked: u8,
    locked: u8,
    open: u8,
    at_goal: u8,
}

const THINGS: [&str; 4] = ["key", "ball", "door", "goal"];
const T_KEY: usize = 0;
const T_BALL: usize = 1;
const T_DOOR: usize = 2;
const T_GOAL: usize = 3;

pub fn vocabulary_for(puzzle: u8) -> FluentSet {
    let mut things = vec!["key", "door"];
    if puzzle >= 2 {
        things.push("ball");
    }
    if puzzle >= 3 {
        things.push("goal");
    }
    let mut f = FluentSet::new();
    for t in &things {
        f.insert(Fluent::new("inRoom", ["agent", t]));
        f.insert(Fluent::new("nextToFacing", ["agent", t]));
    }
    f.insert(Fluent::new("holding", ["agent", "key"]));
    if puzzle >= 2 {
        f.insert(Fluent::new("holding", ["agent", "ball"]));
    }
    f.insert(Fluent::new("handsFree", ["agent"]));
    f.insert(Fluent::new("blocked", ["door"]));
    f.insert(Fluent::new("locked", ["door"]));
    f.insert(Fluent::new("open", ["door"]));
    f.insert(Fluent::new("atGoal", ["agent"]));
    f
}

impl Layout {
    pub fn new(config: EnvConfig) -> Result<Arc<Layout>, EnvError> {
        config.validate()?;
        let wall_x = config.width / 2;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let door = (wall_x, rng.gen_range(1..config.height - 1));
        let has_ball = config.puzzle >= 2;
        let goal = (config.puzzle >= 3).then(|| (config.width - 2, config.height - 2));
        let free_left = (wall_x as usize - 1) * (config.height as usize - 2);
        if free_left < 2 + has_ball as usize {
            return Err(EnvError::Layout("left room cannot hold agent, key and ball".into()));
        }
        let vocabulary = Vocabulary::new(&vocabulary_for(config.puzzle));
        let at = |pred: &str, args: &[&str]| -> Option<u8> {
            vocabulary.index(&Fluent::new(pred, args.iter().copied())).map(|i| i as u8)
        };
        let mut idx = FluentIndex::default();
        for (t, name) in THINGS.iter().enumerate() {
            idx.in_room[t] = at("inRoom", &["agent", name]);
            idx.facing[t] = at("nextToFacing", &["agent", name]);
        }
        idx.holding = [at("holding", &["agent", "key"]), at("holding", &["agent", "ball"])];
        let must = |o: Option<u8>| o.expect("base vocabulary fluent");
        idx.hands_free = must(at("handsFree", &["agent"]));
        idx.blocked = must(at("blocked", &["door"]));
        idx.locked = must(at("locked", &["door"]));
        idx.open = must(at("open", &["door"]));
        idx.at_goal = must(at("atGoal", &["agent"]));
        Ok(Arc::new(Layout {
            config,
            wall_x,
            door,
            has_ball,
            goal,
            vocabulary,
            idx,
        }))
    }

    pub fn in_bounds(&self, p: (i16, i16)) -> bool {
        p.0 >= 0 && p.1 >= 0 && p.0 < self.config.width as i16 && p.1 < self.config.height as i16
    }

    pub fn is_wall(&self, p: Pos) -> bool {
        let (w, h) = (self.config.width, self.config.height);
        p.0 == 0 || p.1 == 0 || p.0 == w - 1 || p.1 == h - 1 || (p.0 == self.wall_x && p != self.door)
    }

    /// Left room 1, right room 2, doorway both.
    pub fn room_of(&self, p: Pos) -> u8 {
        match p.0.cmp(&self.wall_x) {
            std::cmp::Ordering::Less => 1,
            std::cmp::Ordering::Greater => 2,
            std::cmp::Ordering::Equal => 3,
        }
    }

    pub fn ball_home(&self) -> Option<Pos> {
        self.has_ball.then_some((self.door.0 - 1, self.door.1))
    }

    pub fn left_room_cells(&self) -> Vec<Pos> {
        let mut out = Vec::new();
        for y in 1..self.config.height - 1 {
            for x in 1..self.wall_x {
                out.push((x, y));
            }
        }
        out
    }
}

/// Packed MDP state without the step counter or static layout; equal keys
/// under one layout mean equal dynamics.
pub type StateKey = u64;

const NOWHERE: u8 = 0xFF;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridState {
    pub layout: Arc<Layout>,
    pub agent: Pos,
    pub dir: Dir,
    pub carried: Option<Item>,
    /// `None` while carried.
    pub key: Option<Pos>,
    /// `None` while carried or when the puzzle has no ball.
    pub ball: Option<Pos>,
    pub door: DoorStatus,
    pub steps: u32,
}

fn pack_pos(p: Option<Pos>) -> u64 {
    match p {
        Some((x, y)) => ((x as u64) << 4) | y as u64,
        None => NOWHERE as u64,
    }
}

fn unpack_pos(v: u64) -> Option<Pos> {
    let v = (v & 0xFF) as u8;
    (v != NOWHERE).then_some((v >> 4, v & 0xF))
}

/// Samples agent, key and heading for a new episode.
pub fn reset<R: Rng + ?Sized>(config: EnvConfig, rng: &mut R) -> Result<GridState, EnvError> {
    let layout = Layout::new(config)?;
    Ok(reset_layout(&layout, rng))
}

pub fn reset_layout<R: Rng + ?Sized>(layout: &Arc<Layout>, rng: &mut R) -> GridState {
    let ball = layout.ball_home();
    let cells: Vec<Pos> = layout
        .left_room_cells()
        .into_iter()
        .filter(|c| Some(*c) != ball)
        .collect();
    let a = rng.gen_range(0..cells.len());
    let mut k = rng.gen_range(0..cells.len() - 1);
    if k >= a {
        k += 1;
    }
    let dir = Dir::ALL[rng.gen_range(0..4)];
    GridState {
        layout: layout.clone(),
        agent: cells[a],
        dir,
        carried: None,
        key: Some(cells[k]),
        ball,
        door: DoorStatus::Locked,
        steps: 0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub done: bool,
}

impl GridState {
    pub fn key(&self) -> StateKey {
        let mut k = self.agent.0 as u64;
        k |= (self.agent.1 as u64) << 4;
        k |= (self.dir as u64) << 8;
        let carried = match self.carried {
            None => 0u64,
            Some(Item::Key) => 1,
            Some(Item::Ball) => 2,
        };
        k |= carried << 10;
        k |= pack_pos(self.key) << 12;
        k |= pack_pos(self.ball) << 20;
        k |= ((self.door == DoorStatus::Open) as u64) << 28;
        k
    }

    /// Rebuilds a state from its key; the step counter restarts at zero.
    pub fn from_key(layout: &Arc<Layout>, key: StateKey) -> GridState {
        let carried = match (key >> 10) & 3 {
            1 => Some(Item::Key),
            2 => Some(Item::Ball),
            _ => None,
        };
        GridState {
            layout: layout.clone(),
            agent: ((key & 0xF) as u8, ((key >> 4) & 0xF) as u8),
            dir: Dir::ALL[((key >> 8) & 3) as usize],
            carried,
            key: unpack_pos(key >> 12),
            ball: unpack_pos(key >> 20),
            door: if (key >> 28) & 1 == 1 {
                DoorStatus::Open
            } else {
                DoorStatus::Locked
            },
            steps: 0,
        }
    }

    pub fn front(&self) -> Option<Pos> {
        let (dx, dy) = self.dir.delta();
        let p = (self.agent.0 as i16 + dx as i16, self.agent.1 as i16 + dy as i16);
        self.layout.in_bounds(p).then_some((p.0 as u8, p.1 as u8))
    }

    pub fn item_at(&self, p: Pos) -> Option<Item> {
        if self.key == Some(p) {
            Some(Item::Key)
        } else if self.ball == Some(p) {
            Some(Item::Ball)
        } else {
            None
        }
    }

    /// The agent may stand on `p`.
    pub fn passable(&self, p: Pos) -> bool {
        if self.layout.is_wall(p) || self.item_at(p).is_some() {
            return false;
        }
        p != self.layout.door || self.door == DoorStatus::Open
    }

    /// Free floor the carried object can be put on.
    pub fn droppable(&self, p: Pos) -> bool {
        !self.layout.is_wall(p)
            && p != self.layout.door
            && Some(p) != self.layout.goal
            && self.item_at(p).is_none()
    }

    pub fn goal_reached(&self) -> bool {
        match self.layout.config.puzzle {
            3 => Some(self.agent) == self.layout.goal,
            _ => self.door == DoorStatus::Open,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.goal_reached() || self.steps >= self.layout.config.max_steps
    }

    /// Applies `action` in place. Invalid actions still consume a step.
    pub fn step(&mut self, action: PrimitiveAction) -> StepResult {
        let front = self.front();
        match action {
            PrimitiveAction::TurnLeft => self.dir = self.dir.left(),
            PrimitiveAction::TurnRight => self.dir = self.dir.right(),
            PrimitiveAction::Forward => {
                if let Some(p) = front.filter(|p| self.passable(*p)) {
                    self.agent = p;
                }
            }
            PrimitiveAction::Pickup => {
                if let (None, Some(p)) = (self.carried, front) {
                    match self.item_at(p) {
                        Some(Item::Key) => {
                            self.key = None;
                            self.carried = Some(Item::Key);
                        }
                        Some(Item::Ball) => {
                            self.ball = None;
                            self.carried = Some(Item::Ball);
                        }
                        None => {}
                    }
                }
            }
            PrimitiveAction::Drop => {
                if let (Some(item), Some(p)) = (self.carried, front) {
                    if self.droppable(p) {
                        match item {
                            Item::Key => self.key = Some(p),
                            Item::Ball => self.ball = Some(p),
                        }
                        self.carried = None;
                    }
                }
            }
            PrimitiveAction::UseKey => {
                if self.carried == Some(Item::Key)
                    && front == Some(self.layout.door)
                    && self.door == DoorStatus::Locked
                {
                    self.door = DoorStatus::Open;
                }
            }
        }
        self.steps += 1;
        let max = self.layout.config.max_steps;
        if self.goal_reached() {
            StepResult {
                reward: 1.0 - 0.9 * (self.steps as f64 / max as f64),
                done: true,
            }
        } else {
            StepResult {
                reward: 0.0,
                done: self.steps >= max,
            }
        }
    }

    /// Lets a step pass without acting.
    pub fn idle(&mut self) -> StepResult {
        self.steps += 1;
        StepResult {
            reward: 0.0,
            done: self.steps >= self.layout.config.max_steps,
        }
    }

    /// Functional form of [`GridState::step`].
    pub fn stepped(&self, action: PrimitiveAction) -> (GridState, StepResult) {
        let mut next = self.clone();
        let r = next.step(action);
        (next, r)
    }

    fn thing_pos(&self, t: usize) -> Option<Pos> {
        match t {
            T_KEY => self.key,
            T_BALL => self.ball,
            T_DOOR => Some(self.layout.door),
            _ => self.layout.goal,
        }
    }

    fn carries(&self, t: usize) -> bool {
        matches!(
            (t, self.carried),
            (T_KEY, Some(Item::Key)) | (T_BALL, Some(Item::Ball))
        )
    }

    /// Complete detection in compact form.
    pub fn detect_bits(&self) -> Bits {
        let l = &*self.layout;
        let ix = &l.idx;
        let mut value = 0u32;
        let mut set = |i: u8, v: bool| {
            if v {
                value |= 1 << i;
            }
        };
        let agent_room = l.room_of(self.agent);
        let front = self.front();
        for t in [T_KEY, T_BALL, T_DOOR, T_GOAL] {
            if let Some(i) = ix.in_room[t] {
                let same = self.carries(t)
                    || self.thing_pos(t).is_some_and(|p| l.room_of(p) & agent_room != 0);
                set(i, same);
            }
            if let Some(i) = ix.facing[t] {
                set(i, front.is_some() && self.thing_pos(t) == front);
            }
        }
        for (t, item) in [(0, Item::Key), (1, Item::Ball)] {
            if let Some(i) = ix.holding[t] {
                set(i, self.carried == Some(item));
            }
        }
        set(ix.hands_free, self.carried.is_none());
        let approach_x = if agent_room == 2 { l.door.0 + 1 } else { l.door.0 - 1 };
        set(ix.blocked, self.ball == Some((approach_x, l.door.1)));
        set(ix.locked, self.door == DoorStatus::Locked);
        set(ix.open, self.door == DoorStatus::Open);
        set(ix.at_goal, l.goal == Some(self.agent));
        Bits {
            known: (1u32 << l.vocabulary.len()) - 1,
            value,
        }
    }

    /// Detector: complete fluent state over the puzzle vocabulary.
    pub fn detect(&self) -> FluentState {
        self.layout.vocabulary.decode(self.detect_bits())
    }

    pub fn render_ascii(&self) -> String {
        let l = &*self.layout;
        let mut out = String::new();
        for y in 0..l.config.height {
            for x in 0..l.config.width {
                let p = (x, y);
                let c = if p == self.agent {
                    match self.dir {
                        Dir::N => '^',
                        Dir::E => '>',
                        Dir::S => 'v',
                        Dir::W => '<',
                    }
                } else if self.key == Some(p) {
                    'k'
                } else if self.ball == Some(p) {
                    'o'
                } else if p == l.door {
                    if self.door == DoorStatus::Open { '/' } else { 'D' }
                } else if l.goal == Some(p) {
                    'G'
                } else if l.is_wall(p) {
                    '#'
                } else {
                    '.'
                };
                out.push(c);
            }
            out.push('\n');
        }
        out
    }
}

pub fn problem_text(puzzle: u8) -> String {
    let (objects, init, goal) = match puzzle {
        1 => (
            "agent - agent key - key door - door",
            "(inRoom agent key) (inRoom agent door) (handsFree agent) (locked door)",
            "(open door)",
        ),
        2 => (
            "agent - agent key - key ball - ball door - door",
            "(inRoom agent key) (inRoom agent ball) (inRoom agent door) (handsFree agent) (blocked door) (locked door)",
            "(open door)",
        ),
        _ => (
            "agent - agent key - key ball - ball door - door goal - goal",
            "(inRoom agent key) (inRoom agent ball) (inRoom agent door) (handsFree agent) (blocked door) (locked door)",
            "(atGoal agent)",
        ),
    };
    format!(
        "(define (problem puzzle-{puzzle})\n  (:domain two-room)\n  (:objects {objects})\n  (:init {init})\n  (:goal {goal}))\n"
    )
}

/// The hand-written planning model grounded for one puzzle.
pub fn base_task(puzzle: u8) -> Result<StripsTask, OwpddlError> {
    let domain = owpddl::parse_domain(DOMAIN_TEXT)?;
    let problem = owpddl::parse_problem(&problem_text(puzzle))?;
    owpddl::ground(&domain, &problem)
}
