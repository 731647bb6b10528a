"""
Generación del resumen en PDF del benchmark
"""
import os

import numpy as np
from reportlab.lib.units import mm
from reportlab.pdfgen import canvas

from config import REPORT_CONFIG
from utils import format_number, get_current_datetime

COLUMNS = [
    ('Semilla', 'seed', 0),
    ('Método', 'method', 22),
    ('L1 de A', 'l1_profile', 52),
    ('L1 de W', 'l1_proportions', 78),
    ('AUC', 'auc', 104),
    ('s / iter', 'seconds_per_iteration', 126),
    ('Estado', 'status', 150),
]


class BenchmarkReport:
    def __init__(self):
        self.width = REPORT_CONFIG['width_mm'] * mm
        self.height = REPORT_CONFIG['height_mm'] * mm
        self.margin = REPORT_CONFIG['margin_mm'] * mm
        self.line_height = REPORT_CONFIG['font_size_normal'] * REPORT_CONFIG['line_spacing'] * 0.36 * mm
        self.current_y = 0

    def generate_report_pdf(self, report_data, filename):
        """
        Genera el resumen del benchmark en PDF

        report_data = {
            'table': DataFrame con una fila por (semilla, método) y filas 'aggregate',
            'ordering': (semillas con joint < sc-only < naive, semillas evaluadas),
            'config_hash': 'a1b2...',
            'errors': ['semilla 2 / joint: ...']
        }
        """
        directory = os.path.dirname(filename)
        if directory:
            os.makedirs(directory, exist_ok=True)

        c = canvas.Canvas(filename, pagesize=(self.width, self.height))
        c.setTitle(REPORT_CONFIG['title'])
        self.current_y = self.height - self.margin

        self._draw_header(c, report_data)
        self._draw_separator(c, dashed=False)
        self._draw_table(c, report_data['table'])
        self._draw_separator(c, dashed=True)
        self._draw_summary(c, report_data)
        self._draw_separator(c, dashed=False)
        self._draw_footer(c, report_data)

        c.save()
        return filename

    def _new_page_if_needed(self, c, needed):
        if self.current_y - needed < self.margin:
            c.showPage()
            self.current_y = self.height - self.margin

    def _draw_header(self, c, report_data):
        """Título, fecha y hash de configuración"""
        self._draw_centered_text(c, REPORT_CONFIG['title'], REPORT_CONFIG['font_size_title'], bold=True)
        self.current_y -= 2 * mm
        self._draw_centered_text(c, f"Fecha: {get_current_datetime()}", REPORT_CONFIG['font_size_small'])
        self._draw_centered_text(c, f"Configuración: {report_data.get('config_hash', '-')[:16]}",
                                 REPORT_CONFIG['font_size_small'])
        self.current_y -= 2 * mm

    def _draw_separator(self, c, dashed=False):
        """Dibuja una línea separadora"""
        if dashed:
            c.setDash(1, 2)
        else:
            c.setDash()
        c.line(self.margin, self.current_y, self.width - self.margin, self.current_y)
        self.current_y -= 4 * mm

    def _draw_row(self, c, values, bold=False):
        self._new_page_if_needed(c, self.line_height)
        c.setFont("Helvetica-Bold" if bold else "Helvetica", REPORT_CONFIG['font_size_normal'])
        for (_, _, offset), value in zip(COLUMNS, values):
            c.drawString(self.margin + offset * mm, self.current_y, value)
        self.current_y -= self.line_height

    def _draw_table(self, c, table):
        """Una fila por semilla y método; las filas agregadas al final en negrita"""
        self._draw_row(c, [title for title, _, _ in COLUMNS], bold=True)
        self.current_y -= 1 * mm
        for _, row in table.iterrows():
            values = []
            for _, key, _ in COLUMNS:
                value = row.get(key, '')
                if isinstance(value, (float, np.floating)):
                    decimals = 1 if key == 'seconds_per_iteration' else 3
                    values.append(format_number(float(value), decimals))
                else:
                    values.append(str(value))
            self._draw_row(c, values, bold=row['seed'] == 'aggregate')
        self.current_y -= 1 * mm

    def _draw_summary(self, c, report_data):
        """Orden de las pérdidas y evaluaciones fallidas"""
        ordered, total = report_data.get('ordering', (0, 0))
        self._draw_line(c, f"joint < sc-only < naive (L1 de A) en {ordered} de {total} semillas")
        errors = report_data.get('errors') or []
        if errors:
            self._draw_line(c, f"Resultado parcial: {len(errors)} evaluaciones fallidas", bold=True)
            for error in errors:
                text = error if len(error) <= 110 else error[:110] + "..."
                self._draw_line(c, text, size=REPORT_CONFIG['font_size_small'])

    def _draw_footer(self, c, report_data):
        self._draw_line(c, "Tablas completas en benchmark.tsv", size=REPORT_CONFIG['font_size_small'])

    def _draw_line(self, c, text, size=None, bold=False):
        size = size or REPORT_CONFIG['font_size_normal']
        self._new_page_if_needed(c, self.line_height)
        c.setFont("Helvetica-Bold" if bold else "Helvetica", size)
        c.drawString(self.margin, self.current_y, text)
        self.current_y -= self.line_height

    def _draw_centered_text(self, c, text, size, bold=False):
        """Dibuja texto centrado y actualiza current_y"""
        font = "Helvetica-Bold" if bold else "Helvetica"
        c.setFont(font, size)
        text_width = c.stringWidth(text, font, size)
        c.drawString((self.width - text_width) / 2, self.current_y, text)
        self.current_y -= size * 0.5 * mm


# Instancia global
benchmark_report = BenchmarkReport()
