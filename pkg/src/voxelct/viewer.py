from __future__ import annotations

import sys
from typing import Optional

import numpy as np
from PySide6.QtCore import Qt, Signal
from PySide6.QtGui import QAction, QActionGroup, QPixmap
from PySide6.QtWidgets import (
    QApplication,
    QComboBox,
    QHBoxLayout,
    QLabel,
    QMainWindow,
    QMenu,
    QSlider,
    QStatusBar,
    QVBoxLayout,
    QWidget,
)

from .config_store import load_config, save_config
from .errors import InvalidArgumentError
from .imaging import extract_slice, gray8_image, to_gray8
from .metrics import SSIM_WINDOW, reference_range, ssim
from .models import VoxelGrid


class SlicePane(QWidget):
    def __init__(self, parent: Optional[QWidget] = None) -> None:
        super().__init__(parent)
        self._build_ui()

    def _build_ui(self) -> None:
        layout = QVBoxLayout(self)
        layout.setContentsMargins(4, 4, 4, 4)
        layout.setSpacing(4)
        self.title_label = QLabel(self)
        self.title_label.setAlignment(Qt.AlignCenter)
        self.image_label = QLabel(self)
        self.image_label.setAlignment(Qt.AlignCenter)
        self.image_label.setMinimumSize(256, 256)
        layout.addWidget(self.title_label, 0)
        layout.addWidget(self.image_label, 1)

    def set_title(self, text: str) -> None:
        self.title_label.setText(text)

    def show_slice(self, image: np.ndarray) -> None:
        pixmap = QPixmap.fromImage(gray8_image(to_gray8(image)))
        target = self.image_label.size()
        self.image_label.setPixmap(pixmap.scaled(target, Qt.KeepAspectRatio, Qt.FastTransformation))


class SliceViewerWindow(QMainWindow):
    sliceChanged = Signal(int, int)  # axis, index

    def __init__(self, test: VoxelGrid, reference: Optional[VoxelGrid] = None, language: Optional[str] = None) -> None:
        super().__init__()
        if reference is not None and reference.dims != test.dims:
            raise InvalidArgumentError(f"shape mismatch: {test.dims} vs {reference.dims}")
        self.setWindowTitle("VoxelCT")
        self.resize(980, 620)

        self.config = load_config()
        self.ui_language = self._normalize_language(language or self.config.get("ui_language", "ja"))
        self.config["ui_language"] = self.ui_language

        self._test = test.as_array()
        self._reference = reference.as_array() if reference is not None else None
        self._dynamic_range = reference_range(self._reference) if self._reference is not None else 1.0
        self._axis = 2
        self._settings_menu: Optional[QMenu] = None
        self._language_menu: Optional[QMenu] = None

        self._build_ui()
        self._build_actions()
        self._build_menus()
        self._apply_ui_texts()
        self.set_slice(2, self._test.shape[2] // 2)

    def _build_ui(self) -> None:
        central = QWidget(self)
        root_layout = QVBoxLayout(central)
        root_layout.setContentsMargins(8, 8, 8, 8)

        controls = QHBoxLayout()
        self.axis_label = QLabel(central)
        self.axis_combo = QComboBox(central)
        self.axis_combo.addItems(["x", "y", "z"])
        self.axis_combo.setCurrentIndex(self._axis)
        self.axis_combo.currentIndexChanged.connect(self._on_axis_changed)
        self.slice_slider = QSlider(Qt.Horizontal, central)
        self.slice_slider.valueChanged.connect(self._on_slider_moved)
        self.slice_value_label = QLabel(central)
        self.slice_value_label.setMinimumWidth(48)
        controls.addWidget(self.axis_label)
        controls.addWidget(self.axis_combo)
        controls.addWidget(self.slice_slider, 1)
        controls.addWidget(self.slice_value_label)

        panes = QHBoxLayout()
        self.test_pane = SlicePane(central)
        panes.addWidget(self.test_pane, 1)
        self.reference_pane: Optional[SlicePane] = None
        if self._reference is not None:
            self.reference_pane = SlicePane(central)
            panes.addWidget(self.reference_pane, 1)

        root_layout.addLayout(controls)
        root_layout.addLayout(panes, 1)
        self.setCentralWidget(central)
        self.setStatusBar(QStatusBar(self))

    def _build_actions(self) -> None:
        self.action_lang_ja = QAction(self)
        self.action_lang_en = QAction(self)
        self._language_group = QActionGroup(self)
        for action, code in ((self.action_lang_ja, "ja"), (self.action_lang_en, "en")):
            action.setCheckable(True)
            action.setChecked(code == self.ui_language)
            action.triggered.connect(lambda _checked=False, c=code: self._set_language(c))
            self._language_group.addAction(action)

    def _build_menus(self) -> None:
        self._settings_menu = self.menuBar().addMenu("")
        self._language_menu = self._settings_menu.addMenu("")
        self._language_menu.addAction(self.action_lang_ja)
        self._language_menu.addAction(self.action_lang_en)

    def _normalize_language(self, language: object) -> str:
        return "en" if language == "en" else "ja"

    def _t(self, ja: str, en: str) -> str:
        return ja if self.ui_language == "ja" else en

    def _set_language(self, language: str) -> None:
        normalized = self._normalize_language(language)
        if normalized == self.ui_language:
            return
        self.ui_language = normalized
        self.config["ui_language"] = normalized
        self._apply_ui_texts()
        self._refresh()
        save_config(self.config)

    def _apply_ui_texts(self) -> None:
        self.axis_label.setText(self._t("断面軸", "Axis"))
        self.test_pane.set_title(self._t("再構成", "Reconstruction"))
        if self.reference_pane is not None:
            self.reference_pane.set_title(self._t("正解", "Reference"))
        self.action_lang_ja.setText("日本語")
        self.action_lang_en.setText("English")
        if self._settings_menu is not None:
            self._settings_menu.setTitle(self._t("設定", "Settings"))
        if self._language_menu is not None:
            self._language_menu.setTitle(self._t("言語", "Language"))

    def _on_axis_changed(self, axis: int) -> None:
        self.set_slice(axis, self._test.shape[axis] // 2)

    def _on_slider_moved(self, index: int) -> None:
        self.set_slice(self._axis, index)

    def current_slice(self) -> tuple[int, int]:
        return self._axis, self.slice_slider.value()

    def set_slice(self, axis: int, index: int) -> None:
        self._axis = axis
        for widget in (self.axis_combo, self.slice_slider):
            widget.blockSignals(True)
        self.axis_combo.setCurrentIndex(axis)
        self.slice_slider.setRange(0, self._test.shape[axis] - 1)
        self.slice_slider.setValue(max(0, min(index, self._test.shape[axis] - 1)))
        for widget in (self.axis_combo, self.slice_slider):
            widget.blockSignals(False)
        self._refresh()
        self.sliceChanged.emit(*self.current_slice())

    def slice_ssim(self) -> Optional[float]:
        if self._reference is None:
            return None
        axis, index = self.current_slice()
        test = extract_slice(self._test, axis, index)
        if min(test.shape) < SSIM_WINDOW:
            return None
        return ssim(extract_slice(self._reference, axis, index), test, self._dynamic_range)

    def _refresh(self) -> None:
        axis, index = self.current_slice()
        self.slice_value_label.setText(f"{index + 1}/{self._test.shape[axis]}")
        self.test_pane.show_slice(extract_slice(self._test, axis, index))
        if self.reference_pane is not None:
            self.reference_pane.show_slice(extract_slice(self._reference, axis, index))
        score = self.slice_ssim()
        if score is None:
            self.statusBar().showMessage("SSIM: -")
        else:
            self.statusBar().showMessage(self._t(f"断面SSIM: {score:.4f}", f"Slice SSIM: {score:.4f}"))


def run_viewer(test: VoxelGrid, reference: Optional[VoxelGrid] = None, language: Optional[str] = None) -> int:
    app = QApplication.instance() or QApplication(sys.argv)
    app.setApplicationName("VoxelCT")
    app.setOrganizationName("VoxelCT")
    win = SliceViewerWindow(test, reference, language)
    win.show()
    return app.exec()
