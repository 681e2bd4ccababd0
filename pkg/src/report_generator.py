"""
Static HTML comparison report for `compare` runs
"""
import logging
from datetime import datetime
from pathlib import Path
from typing import Dict, List

from jinja2 import Environment, FileSystemLoader

from config import REPORT_CONFIG, TEMPLATE_DIR, ensure_dir

logger = logging.getLogger("pipegnn.report")

TEMPLATE_NAME = "comparison.html"

DEFAULT_TEMPLATE = '''<!DOCTYPE html>
<html lang="en">
<head>
    <meta charset="UTF-8">
    <title>{{ config.title }}</title>
    <style>
        body { font-family: "Source Sans Pro", Helvetica, Arial, sans-serif; margin: 2rem; color: #222; }
        h1 { margin-bottom: 0; }
        .subtitle { color: #666; margin-bottom: 1.5rem; }
        table { border-collapse: collapse; margin-bottom: 2rem; }
        th, td { border: 1px solid #ccc; padding: 0.3rem 0.6rem; text-align: right; }
        th { background: #f2f2f2; }
        td.label { text-align: left; }
        .notes li { margin-bottom: 0.3rem; }
    </style>
</head>
<body>
    <h1>{{ config.title }}</h1>
    <div class="subtitle">{{ config.subtitle }} &middot; generated {{ generated_at.strftime('%Y-%m-%d %H:%M') }}</div>

    <h2>Runs</h2>
    <table>
        <tr>
            <th>run</th><th>seed</th><th>epochs</th><th>final loss</th><th>val acc</th><th>test acc</th>
            <th>pipeline GiB/epoch</th><th>graph GiB/epoch</th><th>bubble</th><th>val acc variance</th>
        </tr>
        {% for run in runs %}
        <tr>
            <td class="label">{{ run.name }}</td><td>{{ run.seed }}</td><td>{{ run.epochs }}</td>
            <td>{{ "%.4f"|format(run.final_loss) }}</td>
            <td>{{ "%.3f"|format(run.val_acc) }}</td><td>{{ "%.3f"|format(run.test_acc) }}</td>
            <td>{{ "%.4f"|format(run.pipeline_gib) }}</td><td>{{ "%.4f"|format(run.graph_gib) }}</td>
            <td>{{ "%.3f"|format(run.bubble) }}</td><td>{{ "%.2e"|format(run.val_variance) }}</td>
        </tr>
        {% endfor %}
    </table>

    <h2>Predicted vs measured volume</h2>
    <table>
        <tr>{% for column in columns %}<th>{{ column }}</th>{% endfor %}</tr>
        {% for row in rows %}
        <tr>{% for column in columns %}
            <td{% if loop.first %} class="label"{% endif %}>{{ row[column] }}</td>
        {% endfor %}</tr>
        {% endfor %}
    </table>

    {% if notes %}
    <h2>Notes</h2>
    <ul class="notes">
        {% for note in notes %}<li>{{ note }}</li>{% endfor %}
    </ul>
    {% endif %}
</body>
</html>
'''


class ReportGenerator:
    """Renders comparison summaries through Jinja2"""

    def __init__(self, template_dir: Path = TEMPLATE_DIR):
        self.template_dir = ensure_dir(template_dir)
        self.env = Environment(loader=FileSystemLoader(str(self.template_dir)), autoescape=True)
        self._ensure_templates()

    def _ensure_templates(self) -> None:
        path = self.template_dir / TEMPLATE_NAME
        if not path.exists():
            path.write_text(DEFAULT_TEMPLATE, encoding="utf-8")

    def render(self, runs: List[Dict], rows: List[Dict], columns: List[str], notes: List[str] = None) -> str:
        template = self.env.get_template(TEMPLATE_NAME)
        return template.render(config=REPORT_CONFIG, generated_at=datetime.now(), runs=runs,
                               rows=rows, columns=columns, notes=notes or [])

    def generate_report(self, path, runs: List[Dict], rows: List[Dict], columns: List[str],
                        notes: List[str] = None) -> Path:
        path = Path(path)
        ensure_dir(path.parent)
        path.write_text(self.render(runs, rows, columns, notes), encoding="utf-8")
        logger.info(f"Comparison report written: {path}")
        return path
