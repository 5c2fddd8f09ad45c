from src.utils.logger import RUN_LOG_NAME, logger, run_log


def test_run_log_captures_only_its_block(tmp_path):
    with run_log(tmp_path / "bundle", "demo") as path:
        logger.info("inside the run")
    logger.info("after the run")
    assert path == tmp_path / "bundle" / RUN_LOG_NAME
    text = path.read_text(encoding="utf-8")
    assert "inside the run" in text
    assert "| demo |" in text
    assert "after the run" not in text


def test_run_log_starts_fresh(tmp_path):
    with run_log(tmp_path, "first"):
        logger.info("first pass")
    with run_log(tmp_path, "second") as path:
        logger.info("second pass")
    text = path.read_text(encoding="utf-8")
    assert "second pass" in text
    assert "first pass" not in text
