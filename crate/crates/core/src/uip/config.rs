use thiserror::Error;

use crate::time::SimTime;
use crate::wire::{IPV4_HEADER_LEN, TCP_HEADER_LEN};

/// IPv4 + TCP header bytes that share the packet buffer with the payload.
pub const HEADER_OVERHEAD: usize = IPV4_HEADER_LEN + TCP_HEADER_LEN;

/// Smallest buffer that still carries 20 payload bytes after the headers.
pub const MIN_BUFFER_SIZE: usize = HEADER_OVERHEAD + 20;

/// Upper bound on the retransmission timeout, in periodic intervals.
pub const MAX_RTO_PERIODS: u16 = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid uIP configuration: {0}")]
pub struct ConfigError(pub String);

/// Run-time equivalent of the `contiki-conf.h` knobs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UipConfig {
    pub max_connections: usize,
    pub max_listen_ports: usize,
    pub udp_connections: usize,
    /// Size of the single shared packet buffer (`UIP_CONF_BUFFER_SIZE`).
    pub buffer_size: usize,
    /// Largest frame the MAC layer hands up (`PACKETBUF_CONF_SIZE`).
    pub packetbuf_size: usize,
    pub tcp_enabled: bool,
    pub udp_enabled: bool,
    pub udp_checksums: bool,
    pub tcp_split: bool,
    pub periodic_interval: SimTime,
    pub max_retransmissions: u8,
    /// Initial retransmission timeout, in periodic intervals.
    pub initial_rto: u16,
    /// TIME_WAIT (and FIN_WAIT_2) lifetime, in periodic intervals.
    pub time_wait_periods: u16,
}

impl Default for UipConfig {
    fn default() -> Self {
        UipConfig {
            max_connections: 40,
            max_listen_ports: 40,
            udp_connections: 10,
            buffer_size: 400,
            packetbuf_size: 400,
            tcp_enabled: true,
            udp_enabled: true,
            udp_checksums: true,
            tcp_split: false,
            periodic_interval: SimTime::from_millis(500),
            max_retransmissions: 8,
            initial_rto: 3,
            time_wait_periods: 2,
        }
    }
}

impl UipConfig {
    pub fn mss(&self) -> usize {
        self.buffer_size - HEADER_OVERHEAD
    }

    /// Receive window advertised in every segment.
    pub fn receive_window(&self) -> u16 {
        self.mss().min(u16::MAX as usize) as u16
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.buffer_size < MIN_BUFFER_SIZE {
            return Err(ConfigError(format!(
                "buffer_size {} below minimum {}",
                self.buffer_size, MIN_BUFFER_SIZE
            )));
        }
        if self.buffer_size > u16::MAX as usize {
            return Err(ConfigError(format!("buffer_size {} exceeds 65535", self.buffer_size)));
        }
        if self.packetbuf_size < MIN_BUFFER_SIZE {
            return Err(ConfigError(format!(
                "packetbuf_size {} below minimum {}",
                self.packetbuf_size, MIN_BUFFER_SIZE
            )));
        }
        if self.max_connections == 0 {
            return Err(ConfigError("max_connections must be at least 1".into()));
        }
        if self.periodic_interval == SimTime::ZERO {
            return Err(ConfigError("periodic_interval must be positive".into()));
        }
        if self.initial_rto == 0 || self.initial_rto > MAX_RTO_PERIODS {
            return Err(ConfigError(format!("initial_rto must be within 1..={MAX_RTO_PERIODS} periods")));
        }
        if self.time_wait_periods == 0 {
            return Err(ConfigError("time_wait_periods must be positive".into()));
        }
        Ok(())
    }
}
