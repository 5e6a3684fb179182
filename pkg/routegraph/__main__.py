"""
Run the registry server.

Run with: python -m routegraph
"""

if __name__ == "__main__":
    import uvicorn

    from routegraph.logging_config import configure_logging
    from routegraph.server import registry_app_from_settings
    from routegraph.settings import load_settings

    settings = load_settings()
    configure_logging(settings.log_level, settings.json_logs)
    uvicorn.run(
        registry_app_from_settings(settings),
        host=settings.host,
        port=settings.port,
        log_level=settings.log_level.lower(),
    )
