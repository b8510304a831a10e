#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::net::{SocketAddr, UdpSocket};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use flowguard::flow::{AddressFamily, FlowRecord};
use flowguard::wire::{encode_ipfix, encode_netflow_v9, IpfixMessageHeader, NetflowV9Header};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flowguard"))
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn flowguard")
}

/// A running `collect` whose socket is bound.
pub struct Collector {
    pub child: Child,
    pub addr: SocketAddr,
    pub stderr: BufReader<std::process::ChildStderr>,
}

pub fn start_collector(out: &Path, extra: &[&str]) -> Collector {
    let mut child = bin()
        .args(["collect", "--listen", "127.0.0.1:0", "--out"])
        .arg(out)
        .args(extra)
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("spawn collector");
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    loop {
        line.clear();
        assert!(stderr.read_line(&mut line).unwrap() > 0, "collector exited before binding");
        if let Some(addr) = line.trim().strip_prefix("listening on ") {
            let addr = addr.parse().unwrap();
            return Collector { child, addr, stderr };
        }
    }
}

impl Collector {
    pub fn send(&self, datagrams: &[Vec<u8>]) {
        let sock = UdpSocket::bind("127.0.0.1:0").unwrap();
        for (i, d) in datagrams.iter().enumerate() {
            sock.send_to(d, self.addr).unwrap();
            if i % 16 == 15 {
                std::thread::sleep(std::time::Duration::from_millis(2));
            }
        }
    }

    /// Waits for exit; returns (status, stdout, stderr).
    pub fn wait(mut self) -> (std::process::ExitStatus, String, String) {
        let mut rest = String::new();
        std::io::Read::read_to_string(&mut self.stderr, &mut rest).unwrap();
        let out = self.child.wait_with_output().unwrap();
        (out.status, String::from_utf8(out.stdout).unwrap(), rest)
    }
}

pub fn ipfix_datagrams(flows: &[FlowRecord], per: usize) -> Vec<Vec<u8>> {
    flows
        .chunks(per)
        .enumerate()
        .map(|(i, chunk)| {
            let export = (chunk.last().unwrap().last_time / 1000) as u32;
            encode_ipfix(chunk, &IpfixMessageHeader::new(export, i as u32, 7), AddressFamily::V4).unwrap()
        })
        .collect()
}

pub fn v9_datagrams(flows: &[FlowRecord], per: usize) -> Vec<Vec<u8>> {
    flows
        .chunks(per)
        .enumerate()
        .map(|(i, chunk)| {
            let export_secs = chunk.last().unwrap().last_time / 1000;
            let header = NetflowV9Header::new(3_600_000, export_secs as u32, i as u32, 7);
            encode_netflow_v9(chunk, &header, AddressFamily::V4).unwrap()
        })
        .collect()
}
