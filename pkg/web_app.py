"""
Flask web application for browsing finished runs
"""

import logging
import math
import os

from flask import Flask, abort, jsonify, request

from config import Config
from exceptions import CheckpointError
from storage import CHECKPOINT_FILE, RunStorage, inspect_checkpoint, list_runs

logger = logging.getLogger(__name__)

app = Flask(__name__)
app.config['RESULTS_DIR'] = os.getenv('SHARPBENCH_RESULTS_DIR', 'runs')


def _run_dir(name: str) -> str:
    """Resolve a run name inside the results directory; anything outside is a 404"""
    root = os.path.realpath(app.config['RESULTS_DIR'])
    path = os.path.realpath(os.path.join(root, name))
    if os.path.commonpath([root, path]) != root or not os.path.isdir(path):
        abort(404)
    return path


def _clean(value):
    # NaN is not valid JSON
    if isinstance(value, float) and math.isnan(value):
        return None
    return value


@app.route('/api/runs')
def api_runs():
    """API endpoint for run listings"""
    try:
        runs = list_runs(app.config['RESULTS_DIR'])
        family = request.args.get('family', 'all')
        if family != 'all':
            runs = [run for run in runs if run.get('family') == family]
        return jsonify({'runs': runs, 'total_count': len(runs)})

    except Exception as e:
        logger.error(f"Error listing runs: {e}")
        return jsonify({'error': str(e)}), 500


@app.route('/api/runs/<path:name>/metrics')
def api_metrics(name):
    """API endpoint for the per-epoch metrics of one run"""
    path = _run_dir(name)
    try:
        frame = RunStorage(path).load_metrics()
        limit = int(request.args.get('limit', '0'))
        if limit > 0:
            frame = frame.tail(limit)
        rows = [{key: _clean(value) for key, value in row.items()} for row in frame.to_dict(orient='records')]
        return jsonify({'run': name, 'metrics': rows, 'total_count': len(rows)})

    except ValueError as e:
        return jsonify({'error': f"bad query: {e}"}), 400
    except Exception as e:
        logger.error(f"Error reading metrics for {name}: {e}")
        return jsonify({'error': str(e)}), 500


@app.route('/api/runs/<path:name>/checkpoint')
def api_checkpoint(name):
    """API endpoint for the best-checkpoint header of one run"""
    path = os.path.join(_run_dir(name), CHECKPOINT_FILE)
    if not os.path.exists(path):
        return jsonify({'error': f"run {name} has no checkpoint"}), 404
    try:
        header = inspect_checkpoint(path)
        header.pop('path', None)
        return jsonify({'run': name, 'checkpoint': header})

    except CheckpointError as e:
        logger.error(f"Unreadable checkpoint for {name}: {e}")
        return jsonify({'error': str(e)}), 422


@app.route('/api/config')
def api_config():
    """API endpoint for the default configuration"""
    return jsonify({
        'results_dir': app.config['RESULTS_DIR'],
        'defaults': Config().to_dict(),
    })


@app.errorhandler(404)
def not_found(error):
    """Handle 404 errors"""
    return jsonify({'error': 'Not found'}), 404


@app.errorhandler(500)
def internal_error(error):
    """Handle 500 errors"""
    return jsonify({'error': 'Internal server error'}), 500
