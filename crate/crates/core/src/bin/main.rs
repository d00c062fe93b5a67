fn main() {
    std::process::exit(geoactivity::cli::dispatch(std::env::args().skip(1)));
}
