use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use super::Service;

/// Answers each non-blank line of `input` on `output` until EOF or a
/// `shutdown` request.
pub fn serve_lines<R: BufRead, W: Write>(service: &Service, input: R, mut output: W) -> io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = service.handle_line(&line);
        output.write_all(reply.as_bytes())?;
        output.write_all(b"\n")?;
        output.flush()?;
        if service.is_stopped() {
            break;
        }
    }
    Ok(())
}

pub fn serve_stdio(service: &Service) -> io::Result<()> {
    let stdin = io::stdin();
    let stdout = io::stdout();
    serve_lines(service, stdin.lock(), stdout.lock())
}

fn connection(service: Arc<Service>, stream: TcpStream) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    let reader = BufReader::new(stream.try_clone()?);
    serve_lines(&service, reader, stream)
}

/// Serves every connection on its own thread. Episodes are shared across
/// connections. Returns once a client sends `shutdown`.
pub fn serve_tcp(service: Arc<Service>, listener: TcpListener) -> io::Result<()> {
    listener.set_nonblocking(true)?;
    let mut workers = Vec::new();
    while !service.is_stopped() {
        match listener.accept() {
            Ok((stream, _)) => {
                let svc = Arc::clone(&service);
                workers.push(thread::spawn(move || {
                    let _ = connection(svc, stream);
                }));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(20)),
            Err(e) => return Err(e),
        }
        workers.retain(|w| !w.is_finished());
    }
    Ok(())
}
