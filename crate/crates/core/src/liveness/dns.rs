//! Minimal DNS client: query encoding and response parsing for existence
//! probes (NS with A fallback), over UDP with TCP retry on truncation.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream, UdpSocket};
use std::time::Duration;

use crate::error::{Error, Result};

pub const TYPE_A: u16 = 1;
pub const TYPE_NS: u16 = 2;
pub const CLASS_IN: u16 = 1;

pub const RCODE_NOERROR: u8 = 0;
pub const RCODE_SERVFAIL: u8 = 2;
pub const RCODE_NXDOMAIN: u8 = 3;

/// Encodes a standard recursive query for `name`.
pub fn build_query(id: u16, name: &str, qtype: u16) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(17 + name.len());
    out.extend_from_slice(&id.to_be_bytes());
    out.extend_from_slice(&[0x01, 0x00]); // RD set
    out.extend_from_slice(&1u16.to_be_bytes()); // QDCOUNT
    out.extend_from_slice(&[0; 6]); // AN/NS/AR counts

    if name.len() > 253 || name.is_empty() {
        return Err(Error::Dns(format!("name {name:?} has invalid length")));
    }
    for part in name.split('.') {
        if part.is_empty() || part.len() > 63 {
            return Err(Error::Dns(format!("label {part:?} in {name:?} has invalid length")));
        }
        out.push(part.len() as u8);
        out.extend_from_slice(part.as_bytes());
    }
    out.push(0);
    out.extend_from_slice(&qtype.to_be_bytes());
    out.extend_from_slice(&CLASS_IN.to_be_bytes());
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct DnsResponse {
    pub rcode: u8,
    pub truncated: bool,
    /// Record types of the answer section.
    pub answer_types: Vec<u16>,
}

/// Walks a (possibly compressed) name, returning the offset just past it.
fn skip_name(bytes: &[u8], mut pos: usize) -> Result<usize> {
    let mut hops = 0;
    loop {
        let len = *bytes.get(pos).ok_or_else(|| Error::Dns("truncated name".into()))? as usize;
        if len == 0 {
            return Ok(pos + 1);
        }
        if len & 0xC0 == 0xC0 {
            // Compression pointer: two bytes, ends the name.
            if pos + 1 >= bytes.len() {
                return Err(Error::Dns("truncated compression pointer".into()));
            }
            return Ok(pos + 2);
        }
        pos += 1 + len;
        hops += 1;
        if hops > 128 {
            return Err(Error::Dns("name with too many labels".into()));
        }
    }
}

/// Parses the pieces of a response this module cares about.
pub fn parse_response(bytes: &[u8], expect_id: u16) -> Result<DnsResponse> {
    if bytes.len() < 12 {
        return Err(Error::Dns("response shorter than a DNS header".into()));
    }
    let id = u16::from_be_bytes([bytes[0], bytes[1]]);
    if id != expect_id {
        return Err(Error::Dns(format!("response id {id} does not match query id {expect_id}")));
    }
    let flags = u16::from_be_bytes([bytes[2], bytes[3]]);
    if flags & 0x8000 == 0 {
        return Err(Error::Dns("response bit not set".into()));
    }
    let truncated = flags & 0x0200 != 0;
    let rcode = (flags & 0x000F) as u8;
    let qdcount = u16::from_be_bytes([bytes[4], bytes[5]]) as usize;
    let ancount = u16::from_be_bytes([bytes[6], bytes[7]]) as usize;

    let mut pos = 12;
    for _ in 0..qdcount {
        pos = skip_name(bytes, pos)?;
        pos += 4; // qtype + qclass
    }

    let mut answer_types = Vec::with_capacity(ancount);
    for _ in 0..ancount {
        pos = skip_name(bytes, pos)?;
        if pos + 10 > bytes.len() {
            return Err(Error::Dns("truncated answer record".into()));
        }
        let rtype = u16::from_be_bytes([bytes[pos], bytes[pos + 1]]);
        let rdlength = u16::from_be_bytes([bytes[pos + 8], bytes[pos + 9]]) as usize;
        pos += 10 + rdlength;
        if pos > bytes.len() {
            return Err(Error::Dns("answer rdata overruns the message".into()));
        }
        answer_types.push(rtype);
    }

    Ok(DnsResponse { rcode, truncated, answer_types })
}

/// One UDP exchange.
pub fn query_udp(resolver: SocketAddr, query: &[u8], timeout: Duration) -> std::io::Result<Vec<u8>> {
    let bind = if resolver.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" };
    let socket = UdpSocket::bind(bind)?;
    socket.set_read_timeout(Some(timeout))?;
    socket.send_to(query, resolver)?;
    let mut buf = vec![0u8; 4096];
    let (n, _) = socket.recv_from(&mut buf)?;
    buf.truncate(n);
    Ok(buf)
}

/// One TCP exchange (used when a UDP answer comes back truncated).
pub fn query_tcp(resolver: SocketAddr, query: &[u8], timeout: Duration) -> std::io::Result<Vec<u8>> {
    let mut stream = TcpStream::connect_timeout(&resolver, timeout)?;
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;
    stream.write_all(&(query.len() as u16).to_be_bytes())?;
    stream.write_all(query)?;
    let mut len_buf = [0u8; 2];
    stream.read_exact(&mut len_buf)?;
    let len = u16::from_be_bytes(len_buf) as usize;
    let mut buf = vec![0u8; len];
    stream.read_exact(&mut buf)?;
    Ok(buf)
}
