use std::net::SocketAddr;

use clap::Parser;

/// Serves the xmtc operations over HTTP/JSON.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
}

#[tokio::main]
async fn main() -> std::io::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let listener = tokio::net::TcpListener::bind(args.bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    xmtc_service::serve(listener).await
}
