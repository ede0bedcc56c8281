/* tslint:disable */
/* eslint-disable */

/**
 * Overlay, heatmap of the planted class, and detected regions.
 */
export class Localized {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    grid_height(): number;
    grid_width(): number;
    /**
     * Row-major `grid_height × grid_width` probabilities for the planted class.
     */
    heatmap(): Float64Array;
    overlay(): Uint8Array;
    /**
     * Tab-separated `class x y w h score` rows with a header line.
     */
    regions(): string;
}

export function augment(_class: number, size: number, seed: number, augment_seed: number, rotation_min: number, rotation_max: number, flip_prob: number): Uint8Array;

export function classNames(): string[];

export function localize(_class: number, size: number, seed: number, window: number, stride: number, threshold: number): Localized;

export function synth(_class: number, size: number, seed: number): Uint8Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_localized_free: (a: number, b: number) => void;
    readonly augment: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly classNames: () => [number, number];
    readonly localize: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly localized_grid_height: (a: number) => number;
    readonly localized_grid_width: (a: number) => number;
    readonly localized_heatmap: (a: number) => [number, number];
    readonly localized_overlay: (a: number) => [number, number];
    readonly localized_regions: (a: number) => [number, number];
    readonly synth: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_drop_slice: (a: number, b: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
