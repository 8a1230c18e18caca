//! Hardware-in-the-loop link: framed serial protocol, a virtual device that
//! speaks it, line-rate transports and a paced loop runner.

pub mod device;
pub mod frame;
pub mod realtime;
pub mod transport;

pub use device::{device_handle, device_tick, DeviceParams, DeviceSim, DeviceState, Direction};
pub use frame::{decode_frame, encode_frame, Frame, FrameDecoder, FrameError};
pub use realtime::{
    pwm_command, run_device, run_realtime_loop, run_realtime_loop_observed, DeviceThread, LoopConfig, LoopMode,
    LoopObserver, LoopStats, LoopUpdate,
};
pub use transport::{pipe_pair, PipeEnd, TcpTransport, Transport, DEFAULT_BAUD};
