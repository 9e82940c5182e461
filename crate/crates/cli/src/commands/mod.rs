pub mod bench;
pub mod calibrate;
pub mod detect;
pub mod evaluate;
pub mod explain_dump;
pub mod simulate;
