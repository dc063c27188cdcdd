//! Instance registry and simulator interface.
//!
//! Every constrained-stack instance lives in its own slot. An instance is
//! reached only through [`StackRegistry::with_instance`], which activates
//! exactly one instance at a time; the active id is what generated code
//! would read through `get_stack_id()`.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::time::SimTime;
use crate::uip::{ConfigError, ConnHandle, UipApp, UipConfig, UipStack};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StackId(pub usize);

impl fmt::Display for StackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stack#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CradleError {
    #[error("all {0} stack slots are in use")]
    RegistryFull(usize),
    #[error("an instance is already active")]
    NestedActivation,
    #[error("unknown stack id {0}")]
    UnknownStackId(usize),
    #[error("netstack driver slot `{0}` is unbound")]
    UnboundDriver(&'static str),
    #[error("clock went backwards from {prev} to {now}")]
    NonMonotonicClock { prev: SimTime, now: SimTime },
    #[error("frame of {len} bytes exceeds packetbuf size {max}")]
    FrameTooLargeForPacketbuf { len: usize, max: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// One layer of the netstack. Frames pass through unchanged unless a driver
/// overrides a direction; returning `None` swallows the frame.
pub trait NetDriver {
    fn name(&self) -> &'static str;

    fn input(&mut self, frame: Vec<u8>) -> Option<Vec<u8>> {
        Some(frame)
    }

    fn output(&mut self, frame: Vec<u8>) -> Option<Vec<u8>> {
        Some(frame)
    }
}

macro_rules! null_driver {
    ($ty:ident, $name:literal) => {
        #[derive(Debug, Default, Clone, Copy)]
        pub struct $ty;

        impl NetDriver for $ty {
            fn name(&self) -> &'static str {
                $name
            }
        }
    };
}

null_driver!(NullRdcDriver, "nullrdc_driver");
null_driver!(NullRadioDriver, "nullradio_driver");
null_driver!(FramerNullMac, "framer_nullmac");
null_driver!(UipDriver, "uip_driver");

/// MAC driver that hands output back to the simulator instead of a radio.
#[derive(Debug, Default, Clone)]
pub struct NscMacDriver {
    captured: Vec<Vec<u8>>,
}

impl NetDriver for NscMacDriver {
    fn name(&self) -> &'static str {
        "nsc_mac_driver"
    }

    fn output(&mut self, frame: Vec<u8>) -> Option<Vec<u8>> {
        self.captured.push(frame);
        None
    }
}

impl NscMacDriver {
    fn take(&mut self) -> Vec<Vec<u8>> {
        std::mem::take(&mut self.captured)
    }
}

/// The five exchangeable netstack slots. Input climbs
/// radio → framer → rdc → mac → network; output leaves through the MAC slot,
/// which captures it for the simulator.
#[derive(Default)]
pub struct NetstackDrivers {
    pub mac: Option<NscMacDriver>,
    pub rdc: Option<Box<dyn NetDriver>>,
    pub radio: Option<Box<dyn NetDriver>>,
    pub framer: Option<Box<dyn NetDriver>>,
    pub network: Option<Box<dyn NetDriver>>,
}

impl NetstackDrivers {
    /// The configuration the cradle is built for: output captured at the MAC,
    /// everything below it a pass-through.
    pub fn nsc() -> NetstackDrivers {
        NetstackDrivers {
            mac: Some(NscMacDriver::default()),
            rdc: Some(Box::new(NullRdcDriver)),
            radio: Some(Box::new(NullRadioDriver)),
            framer: Some(Box::new(FramerNullMac)),
            network: Some(Box::new(UipDriver)),
        }
    }

    pub fn validate(&self) -> Result<(), CradleError> {
        if self.mac.is_none() {
            return Err(CradleError::UnboundDriver("mac"));
        }
        let slots: [(&'static str, &Option<Box<dyn NetDriver>>); 4] =
            [("rdc", &self.rdc), ("radio", &self.radio), ("framer", &self.framer), ("network", &self.network)];
        for (name, slot) in slots {
            if slot.is_none() {
                return Err(CradleError::UnboundDriver(name));
            }
        }
        Ok(())
    }

    /// Driver names bound to mac, rdc, radio, framer, network.
    pub fn names(&self) -> [Option<&'static str>; 5] {
        [
            self.mac.as_ref().map(|d| d.name()),
            self.rdc.as_ref().map(|d| d.name()),
            self.radio.as_ref().map(|d| d.name()),
            self.framer.as_ref().map(|d| d.name()),
            self.network.as_ref().map(|d| d.name()),
        ]
    }

    fn climb(&mut self, frame: Vec<u8>) -> Option<Vec<u8>> {
        let f = self.radio.as_mut()?.input(frame)?;
        let f = self.framer.as_mut()?.input(f)?;
        let f = self.rdc.as_mut()?.input(f)?;
        let f = self.mac.as_mut()?.input(f)?;
        self.network.as_mut()?.input(f)
    }

    fn send_down(&mut self, frames: Vec<Vec<u8>>) -> Vec<Vec<u8>> {
        let (Some(net), Some(mac)) = (self.network.as_mut(), self.mac.as_mut()) else {
            return Vec::new();
        };
        for f in frames {
            if let Some(f) = net.output(f) {
                mac.output(f);
            }
        }
        mac.take()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InstanceStats {
    pub frames_in: u64,
    pub frames_out: u64,
    pub packetbuf_drops: u64,
    pub driver_drops: u64,
}

/// Everything one stack instance owns.
pub struct Instance<A> {
    id: StackId,
    stack: UipStack<A>,
    drivers: NetstackDrivers,
    clock: SimTime,
    stats: InstanceStats,
}

impl<A: UipApp> Instance<A> {
    pub fn id(&self) -> StackId {
        self.id
    }

    pub fn stack(&self) -> &UipStack<A> {
        &self.stack
    }

    pub fn stack_mut(&mut self) -> &mut UipStack<A> {
        &mut self.stack
    }

    pub fn stats(&self) -> &InstanceStats {
        &self.stats
    }

    pub fn drivers(&self) -> &NetstackDrivers {
        &self.drivers
    }

    /// Clock stub: the last simulation time handed to this instance.
    pub fn clock(&self) -> SimTime {
        self.clock
    }

    fn advance_clock(&mut self, now: SimTime) -> Result<(), CradleError> {
        if now < self.clock {
            return Err(CradleError::NonMonotonicClock { prev: self.clock, now });
        }
        self.clock = now;
        self.stack.set_clock(now);
        Ok(())
    }

    /// Routes frames produced by the stack out through the drivers.
    pub fn emit(&mut self, frames: Vec<Vec<u8>>) -> Vec<Vec<u8>> {
        let out = self.drivers.send_down(frames);
        self.stats.frames_out += out.len() as u64;
        out
    }

    fn inject(&mut self, frame: &[u8], now: SimTime) -> Result<Vec<Vec<u8>>, CradleError> {
        self.advance_clock(now)?;
        self.stats.frames_in += 1;
        let max = self.stack.config().packetbuf_size;
        if frame.len() > max {
            self.stats.packetbuf_drops += 1;
            return Err(CradleError::FrameTooLargeForPacketbuf { len: frame.len(), max });
        }
        let Some(up) = self.drivers.climb(frame.to_vec()) else {
            self.stats.driver_drops += 1;
            return Ok(Vec::new());
        };
        let out = self.stack.input(&up);
        Ok(self.emit(out))
    }

    fn tick(&mut self, now: SimTime) -> Result<Vec<Vec<u8>>, CradleError> {
        self.advance_clock(now)?;
        let out = self.stack.periodic();
        Ok(self.emit(out))
    }

    fn poll(&mut self, conn: ConnHandle, now: SimTime) -> Result<Vec<Vec<u8>>, CradleError> {
        self.advance_clock(now)?;
        let out = self.stack.poll(conn);
        Ok(self.emit(out))
    }
}

/// Fixed-capacity table of stack instances with explicit, non-nested
/// activation.
pub struct StackRegistry<A> {
    slots: Vec<RefCell<Option<Instance<A>>>>,
    current: Cell<Option<StackId>>,
}

struct Activation<'a>(&'a Cell<Option<StackId>>);

impl Drop for Activation<'_> {
    fn drop(&mut self) {
        self.0.set(None);
    }
}

impl<A: UipApp> StackRegistry<A> {
    pub fn new(num_stacks: usize) -> StackRegistry<A> {
        StackRegistry { slots: (0..num_stacks).map(|_| RefCell::new(None)).collect(), current: Cell::new(None) }
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn len(&self) -> usize {
        self.slots.iter().filter(|s| s.borrow().is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Creates a fresh instance in the lowest free slot.
    pub fn create_instance(
        &mut self,
        config: UipConfig,
        drivers: NetstackDrivers,
        addr: Ipv4Addr,
        app: A,
        seed: u64,
    ) -> Result<StackId, CradleError> {
        config.validate()?;
        drivers.validate()?;
        let i = self
            .slots
            .iter()
            .position(|s| s.borrow().is_none())
            .ok_or(CradleError::RegistryFull(self.slots.len()))?;
        let id = StackId(i);
        let stack = UipStack::new(config, addr, app, seed);
        *self.slots[i].borrow_mut() =
            Some(Instance { id, stack, drivers, clock: SimTime::ZERO, stats: InstanceStats::default() });
        Ok(id)
    }

    /// Frees the slot. A later `create_instance` may reuse the id and starts
    /// from zeroed state.
    pub fn destroy_instance(&mut self, id: StackId) -> Result<(), CradleError> {
        let slot = self.slots.get(id.0).ok_or(CradleError::UnknownStackId(id.0))?;
        if slot.borrow_mut().take().is_none() {
            return Err(CradleError::UnknownStackId(id.0));
        }
        Ok(())
    }

    /// The active instance, if any (`get_stack_id()`).
    pub fn current_stack_id(&self) -> Option<StackId> {
        self.current.get()
    }

    /// Activates `id` for the duration of `action`.
    pub fn with_instance<R>(&self, id: StackId, action: impl FnOnce(&mut Instance<A>) -> R) -> Result<R, CradleError> {
        if self.current.get().is_some() {
            return Err(CradleError::NestedActivation);
        }
        let slot = self.slots.get(id.0).ok_or(CradleError::UnknownStackId(id.0))?;
        let mut guard = slot.borrow_mut();
        let inst = guard.as_mut().ok_or(CradleError::UnknownStackId(id.0))?;
        self.current.set(Some(id));
        let _active = Activation(&self.current);
        Ok(action(inst))
    }

    /// Hands a received frame to instance `id` and returns its output.
    pub fn inject_frame(&self, id: StackId, frame: &[u8], now: SimTime) -> Result<Vec<Vec<u8>>, CradleError> {
        self.with_instance(id, |inst| inst.inject(frame, now))?
    }

    /// Runs the periodic timer of instance `id`.
    pub fn tick(&self, id: StackId, now: SimTime) -> Result<Vec<Vec<u8>>, CradleError> {
        self.with_instance(id, |inst| inst.tick(now))?
    }

    /// Polls one connection of instance `id`.
    pub fn poll(&self, id: StackId, conn: ConnHandle, now: SimTime) -> Result<Vec<Vec<u8>>, CradleError> {
        self.with_instance(id, |inst| inst.poll(conn, now))?
    }
}
